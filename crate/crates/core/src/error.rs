use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum EicError {
    /// A tensor or frame had the wrong extent along a named axis.
    #[error("dimension error on {axis}: {detail}")]
    Dimension { axis: String, detail: String },

    /// Wrong number of inputs (frames, targets) supplied to an operation.
    #[error("arity error: expected {expected} {what}, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid synthetic-scene geometry or motion parameters.
    #[error("invalid motion specification: {0}")]
    Spec(String),

    /// Invalid configuration (training, evaluation, data generation).
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file could not be decoded.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Training produced a non-finite loss.
    #[error("numerical abort at step {step}: {detail}")]
    Numerical { step: u64, detail: String },

    /// Two metric reports do not cover the same (clip, window, horizon) keys.
    #[error("report keys differ; missing: {}", .missing.join(", "))]
    KeyMismatch { missing: Vec<String> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EicError>;

impl EicError {
    pub(crate) fn dim(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        EicError::Dimension {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EicError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        EicError::Format {
            offset,
            detail: detail.into(),
        }
    }
}
