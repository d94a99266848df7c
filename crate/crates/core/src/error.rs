use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum GmaError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("{op}: no valid entries ({detail})")]
    EmptyMask { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {cause} (batch dumped to {})", dump.display())]
    Diverged {
        epoch: usize,
        step: usize,
        cause: String,
        dump: PathBuf,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GmaError> = std::result::Result<T, E>;

impl GmaError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        GmaError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GmaError::Io {
            path: path.into(),
            source,
        }
    }
}
