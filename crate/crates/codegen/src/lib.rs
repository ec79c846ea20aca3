//! Build-time generation of kernel variants.
//!
//! A [`KernelConfig`] lists the chunk heights and block-vector widths that get
//! dedicated kernels. For every configured `(chunk height, width)` pair a
//! [`Template`] is rendered into its own source unit; the build script of the
//! core crate then emits a dispatch table over the generated functions.

mod expr;
mod template;

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

pub use expr::eval;
pub use template::Template;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("{template}:{line}: {msg}")]
    Syntax { template: String, line: usize, msg: String },
    #[error("unknown name `{0}`")]
    UnknownName(String),
    #[error("malformed expression `{0}`")]
    Expr(String),
    #[error("invalid kernel configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dimensions with generated kernels.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub chunk_heights: Vec<usize>,
    pub block_widths: Vec<usize>,
}

impl KernelConfig {
    pub fn from_toml(src: &str) -> Result<Self, GenError> {
        let cfg: KernelConfig = toml::from_str(src).map_err(|e| GenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GenError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Lists must be non-empty, strictly increasing and positive.
    pub fn validate(&self) -> Result<(), GenError> {
        for (what, list) in [("chunk_heights", &self.chunk_heights), ("block_widths", &self.block_widths)] {
            if list.is_empty() {
                return Err(GenError::Config(format!("{what} is empty")));
            }
            if list[0] == 0 {
                return Err(GenError::Config(format!("{what} contains 0")));
            }
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GenError::Config(format!("{what} must be sorted and duplicate-free")));
            }
        }
        Ok(())
    }

    /// All configured `(chunk height, width)` pairs in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.chunk_heights
            .iter()
            .flat_map(|&c| self.block_widths.iter().map(move |&w| (c, w)))
            .collect()
    }
}

/// One rendered source unit.
#[derive(Debug, Clone)]
pub struct Unit {
    pub file_name: String,
    pub chunk_height: usize,
    pub block_width: usize,
    pub source: String,
}

/// Renders `template` once per configured pair. The variant variables are
/// `CHUNKHEIGHT` and `BLOCKDIM` (alias `BLOCKDIM1`).
pub fn render_pairs(template: &Template, config: &KernelConfig) -> Result<Vec<Unit>, GenError> {
    config
        .pairs()
        .into_iter()
        .map(|(c, w)| {
            let mut vars = HashMap::new();
            vars.insert("CHUNKHEIGHT".to_string(), c as i64);
            vars.insert("BLOCKDIM".to_string(), w as i64);
            vars.insert("BLOCKDIM1".to_string(), w as i64);
            Ok(Unit {
                file_name: format!("{}_{c}_{w}.rs", template.name()),
                chunk_height: c,
                block_width: w,
                source: template.render(&vars)?,
            })
        })
        .collect()
}

/// Renders `template` once per configured block width (`BLOCKDIM`).
pub fn render_widths(template: &Template, config: &KernelConfig) -> Result<Vec<Unit>, GenError> {
    config
        .block_widths
        .iter()
        .map(|&w| {
            let mut vars = HashMap::new();
            vars.insert("BLOCKDIM".to_string(), w as i64);
            vars.insert("BLOCKDIM1".to_string(), w as i64);
            Ok(Unit {
                file_name: format!("{}_{w}.rs", template.name()),
                chunk_height: 0,
                block_width: w,
                source: template.render(&vars)?,
            })
        })
        .collect()
}
