use thiserror::Error;

/// Errors raised by assembly, conditioning and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite integrand value at {location:?}")]
    NonFinite { location: Vec<f64> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "ill-conditioned covariance: factorization failed after {attempts} attempts \
         (condition estimate {condition_estimate:.3e})"
    )]
    IllConditioned {
        condition_estimate: f64,
        attempts: usize,
    },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
