//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any sparsesbc operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file did not match its expected on-disk format.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Invalid or inconsistent configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller violated an operation contract (shape or length mismatch,
    /// out-of-domain argument).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Checkpoint file rejected (bad magic, version, or architecture mismatch).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A training step produced a non-finite gradient.
    #[error("non-finite gradient in {context}: {detail}")]
    NonFiniteGradient { context: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
