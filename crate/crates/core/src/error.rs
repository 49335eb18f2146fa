use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the adapter laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rank {rank} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange { rank: usize, rows: usize, cols: usize },

    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("trainable vector length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("operation {op} does not apply to method {method}")]
    MethodMismatch { op: &'static str, method: &'static str },

    #[error("invalid adapter configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("base weight digest does not match checkpoint")]
    DigestMismatch,

    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u32),

    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
