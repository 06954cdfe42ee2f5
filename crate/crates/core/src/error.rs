use thiserror::Error;

/// Errors raised by the decomposition library.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a precondition (length, finiteness, sign).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input is well-formed but degenerate for the requested computation
    /// (zero variance, singular regression, identical points).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Hyperparameters or other configuration values are out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A query point lies outside the domain of a grid.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// Every candidate evaluation of a tuning run failed.
    #[error("tuning failed after {n} evaluations: {message}", n = trace.len())]
    Tuning { message: String, trace: Vec<crate::tuning::TraceEntry> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}

pub(crate) fn degenerate<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Degenerate(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
