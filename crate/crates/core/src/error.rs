use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("Tanimoto kernel is undefined for a pair of all-zero fingerprints")]
    EmptyFingerprint,

    #[error("input representation does not match the kernel family {0}")]
    RepresentationMismatch(&'static str),

    #[error("operation not supported for kernel family {0}")]
    UnsupportedFamily(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} of size {size} exceeds the configured cap of {cap}")]
    CapExceeded {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("Cholesky factorisation failed: {0}")]
    Factorisation(String),

    #[error("targets have zero variance")]
    ZeroVariance,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("solver diverged at step {step}")]
    Diverged { step: usize },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
