use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("illegal state: {0}")]
    IllegalState(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("masked field `{field}` of unit {unit} read at t={t}")]
    MaskedRead { unit: usize, field: &'static str, t: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn illegal(msg: impl Into<String>) -> Error {
    Error::IllegalState(msg.into())
}
