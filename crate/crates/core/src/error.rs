use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-domain arguments (non-finite entries, wrong sizes, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A run or grid configuration that violates a resolution or geometry rule.
    #[error("configuration error: {0}")]
    Config(String),
    /// A combination of parameters that a routine does not handle.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    /// Breakdown of an inner numerical method.
    #[error("solver error: {0}")]
    Solver(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn unsupported<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Unsupported(msg.into()))
}
