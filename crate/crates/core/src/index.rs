//! Index types, build configuration and comparison tolerances.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Raw global index (row or column of the distributed matrix).
pub type Gidx = i64;
/// Raw rank-local index.
pub type Lidx = i32;

/// Row or column index of the global matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlobalIndex(Gidx);

/// Index into a rank-local matrix part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalIndex(Lidx);

impl GlobalIndex {
    pub fn new(value: i64) -> Result<Self> {
        if value < 0 {
            return Err(Error::NegativeIndex(value));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> i64 {
        self.0
    }
}

impl LocalIndex {
    pub fn new(value: i32) -> Result<Self> {
        if value < 0 {
            return Err(Error::NegativeIndex(value as i64));
        }
        Ok(Self(value))
    }

    pub fn get(self) -> i32 {
        self.0
    }

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for GlobalIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for LocalIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Converts a global index to a local one; fails when it does not fit 32 bits.
pub fn narrow_index(g: GlobalIndex) -> Result<LocalIndex> {
    i32::try_from(g.0).map(LocalIndex).map_err(|_| Error::Overflow(g.0))
}

pub(crate) fn to_lidx(v: usize) -> Result<Lidx> {
    i32::try_from(v).map_err(|_| Error::Overflow(v as i64))
}

mod compiled {
    include!(concat!(env!("OUT_DIR"), "/build_config.rs"));
}

/// Chunk heights and block widths that have dedicated kernels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildConfig {
    chunk_heights: Vec<usize>,
    block_widths: Vec<usize>,
}

impl BuildConfig {
    pub fn new(chunk_heights: Vec<usize>, block_widths: Vec<usize>) -> Result<Self> {
        for (what, list) in [("chunk heights", &chunk_heights), ("block widths", &block_widths)] {
            if list.is_empty() || list[0] == 0 {
                return Err(Error::InvalidArgument(format!("{what} must be non-empty and positive")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!("{what} must be sorted and duplicate-free")));
            }
        }
        Ok(Self { chunk_heights, block_widths })
    }

    /// The configuration the kernels of this build were generated for.
    pub fn compiled() -> &'static BuildConfig {
        static CFG: OnceLock<BuildConfig> = OnceLock::new();
        CFG.get_or_init(|| BuildConfig {
            chunk_heights: compiled::CHUNK_HEIGHTS.to_vec(),
            block_widths: compiled::BLOCK_WIDTHS.to_vec(),
        })
    }

    pub fn chunk_heights(&self) -> &[usize] {
        &self.chunk_heights
    }

    pub fn block_widths(&self) -> &[usize] {
        &self.block_widths
    }

    pub fn has_chunk_height(&self, c: usize) -> bool {
        self.chunk_heights.binary_search(&c).is_ok()
    }

    pub fn has_block_width(&self, w: usize) -> bool {
        self.block_widths.binary_search(&w).is_ok()
    }

    pub fn max_chunk_height(&self) -> usize {
        *self.chunk_heights.last().unwrap()
    }
}

/// Relative comparison bound: `|a - b| <= rel_eps * (1 + |b|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    rel_eps: f64,
}

impl Tolerance {
    pub fn new(rel_eps: f64) -> Result<Self> {
        if !(rel_eps > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {rel_eps}")));
        }
        Ok(Self { rel_eps })
    }

    /// 1e-12 for double precision types, 1e-5 for single.
    pub fn for_type<S: Scalar>() -> Self {
        if S::VALUE_TYPE.is_single() {
            Self { rel_eps: 1e-5 }
        } else {
            Self { rel_eps: 1e-12 }
        }
    }

    pub fn rel_eps(&self) -> f64 {
        self.rel_eps
    }

    pub fn close<S: Scalar>(&self, a: S, b: S) -> bool {
        (a - b).modulus() <= self.rel_eps * (1.0 + b.modulus())
    }

    /// Index of the first element pair violating the bound.
    pub fn first_mismatch<S: Scalar>(&self, a: &[S], b: &[S]) -> Option<usize> {
        if a.len() != b.len() {
            return Some(a.len().min(b.len()));
        }
        a.iter().zip(b).position(|(&x, &y)| !self.close(x, y))
    }
}
