use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("{attack} attack failed: {reason}")]
    Attack { attack: &'static str, reason: String },

    #[error("gradient singular at deepfool step {step} (|grad| = {norm:.3e})")]
    Singularity { step: usize, norm: f64 },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {found} in {path} (expected {expected})")]
    BadVersion { path: PathBuf, expected: u16, found: u16 },

    #[error("truncated file {path}: needed {needed} more bytes at offset {offset}")]
    Truncated { path: PathBuf, offset: usize, needed: usize },

    #[error("inconsistent shape table in {path}: {detail}")]
    ShapeTable { path: PathBuf, detail: String },

    #[error("ingest error at {path}:{line}: {detail}")]
    Ingest { path: PathBuf, line: usize, detail: String },

    #[error("scenario violation in field `{field}`: {detail}")]
    ScenarioViolation { field: &'static str, detail: String },

    #[error("missing checkpoint for `{0}` in model registry")]
    MissingCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }
}
