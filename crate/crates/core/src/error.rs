use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied malformed input (shape, finiteness, parameter range).
    #[error("invalid input: {0}")]
    Input(String),

    /// A computation left its numerically valid regime.
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn numerical<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numerical(msg.into()))
}
