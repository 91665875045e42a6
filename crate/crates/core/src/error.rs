use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that do not fit together, or an axis that does not exist.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A file that does not follow the expected binary or text layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("empty set: {0}")]
    Empty(String),

    /// Non-finite values surfaced during a computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A quantity that is undefined for the given input, such as the
    /// effective rank of an all-zero matrix.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
