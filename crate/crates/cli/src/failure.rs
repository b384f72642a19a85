use std::fmt;

use distfree_core::Error;

use crate::config::ConfigError;

/// Why a command stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// A self-check did not hold; carries the failing check names.
    Check(Vec<String>),
    /// Bad configuration, missing or malformed input files, I/O.
    Input(String),
    /// Ill-conditioned or non-finite numerics.
    Numeric(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(names) => write!(f, "failing checks: {}", names.join(", ")),
            Failure::Input(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::IllConditioned { .. } | Error::NonFinite { .. } | Error::Consistency(_) => {
                Failure::Numeric(e.to_string())
            }
            Error::InvalidArgument(_) | Error::DimensionMismatch(_) | Error::Format(_) | Error::Io(_) => {
                Failure::Input(e.to_string())
            }
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Input(format!("configuration: {e}"))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}
