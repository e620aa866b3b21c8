//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied parameters or configuration files.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input file; `row` is the 1-based line number including the header.
    #[error("parse error in {path} at line {row}: {message}")]
    Parse {
        path: String,
        row: usize,
        message: String,
    },

    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller violated an internal protocol (e.g. annotating an id that is
    /// not in the unlabeled pool).
    #[error("internal consistency violation: {0}")]
    Consistency(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn consistency(msg: impl Into<String>) -> Self {
        Error::Consistency(msg.into())
    }

    /// True for errors that stem from user input rather than runtime failures.
    /// The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Parse { .. })
    }
}
