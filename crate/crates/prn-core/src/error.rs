//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrnError {
    /// Malformed input data or violated data invariants; names the record
    /// and field where possible.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration or arguments.
    #[error("config error: {0}")]
    Config(String),

    /// Shape or dimension mismatch between tensors.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Training diverged or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Step-1 extraction found no dictionary entity; the recipe needs a
    /// manual override entry.
    #[error("no entities found in recipe '{0}': needs manual annotation")]
    NeedsAnnotation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl PrnError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        PrnError::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PrnError::Data(_)
            | PrnError::Config(_)
            | PrnError::Dimension(_)
            | PrnError::NeedsAnnotation(_) => 1,
            PrnError::Numeric(_) | PrnError::Io { .. } | PrnError::Serde(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PrnError>;
