use thiserror::Error;

/// Errors raised by the numerical routines and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric failure: {0}")]
    NumericFailure(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("blow-up detected on path {path_id} at t = {t}")]
    BlowUp { path_id: u64, t: f64 },
    #[error("fit undefined: {0}")]
    FitUndefined(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("non-integrable exponent: {0}")]
    NonIntegrable(String),
    #[error("property violation: {0}")]
    PropertyViolation(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_) | Error::InvalidArgument(_) | Error::Domain(_) => 2,
            Error::PropertyViolation(_) | Error::InvariantViolation(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
