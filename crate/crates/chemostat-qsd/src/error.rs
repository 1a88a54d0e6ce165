use thiserror::Error;

/// Crate-wide error type. The CLI maps variants onto process exit codes:
/// configuration/precondition problems exit 1, statistical-power problems
/// exit 2, internal invariant violations exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A configuration file or parameter set is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A Monte-Carlo estimate does not have enough samples to be usable.
    #[error("insufficient statistical power: {0}")]
    Power(String),

    /// An internal invariant was violated; indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Precondition(_) | Error::Config(_) | Error::Io(_) => 1,
            Error::Power(_) => 2,
            Error::Numeric(_) | Error::Invariant(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
