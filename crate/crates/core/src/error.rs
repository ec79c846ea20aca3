use thiserror::Error;

use crate::partition::TransportError;
use crate::taskpool::TaskError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {0} does not fit into a 32-bit local index")]
    Overflow(i64),
    #[error("negative index {0}")]
    NegativeIndex(i64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("row {row}: column index {col} out of range (ncols = {ncols})")]
    InvalidColumn { row: usize, col: i64, ncols: usize },
    #[error("row {row} has {len} entries, more than max_rowlen = {max}")]
    RowTooLong { row: usize, len: usize, max: usize },
    #[error("sparsity pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("operation does not accept scattered views")]
    ScatteredView,
    #[error("cannot allocate {0} elements")]
    Alloc(usize),
    #[error("kernel variant {0} is not compiled into this build")]
    KernelUnavailable(String),
    #[error("malformed input at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed binary matrix: {0}")]
    Format(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
