//! Error type shared across the toolkit.

use thiserror::Error;

/// Convenience alias used by every fallible operation in this crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error for configuration, data, and runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of an input do not match what the operation requires.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument value is outside the operation's domain.
    #[error("invalid input: {0}")]
    Input(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The operation was called on an object in a state that cannot serve it
    /// (for example querying statistics of an empty window).
    #[error("invalid state: {0}")]
    State(String),

    /// A dataset file could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
