use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Short machine-readable class name, used for CLI exit codes and reports.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Dimension { .. } => "dimension",
            Error::NotPositiveDefinite(_) => "not-positive-definite",
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::Data(_) => "data",
            Error::Schema(_) => "schema",
            Error::Io(_) => "io",
            Error::Serde(_) => "serialization",
        }
    }

    /// Process exit code for this error class. 0 and 2 (usage) are left to the caller.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_) => 3,
            Error::Dimension { .. } => 4,
            Error::NotPositiveDefinite(_) => 5,
            Error::Domain(_) => 6,
            Error::Numerical(_) => 7,
            Error::Data(_) => 8,
            Error::Schema(_) => 9,
            Error::Io(_) => 10,
            Error::Serde(_) => 11,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
