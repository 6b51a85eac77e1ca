use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Load {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("cannot sample relation `{relation}`: {reason}")]
    Sampling { relation: String, reason: String },

    #[error("encoding failed: {0}")]
    Encoding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range 1..={len}")]
    Index { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("initialization failed for relation `{relation}`: {reason}")]
    Init { relation: String, reason: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("ratio undefined: reference F1 is zero")]
    UndefinedRatio,

    #[error("unknown word `{0}`")]
    UnknownWord(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
