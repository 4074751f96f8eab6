use alloc::string::String;

/// Errors raised by the core model and sampler.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Caller passed an argument outside the operation's domain.
    #[error("rejected input: {0}")]
    RejectedInput(String),
    /// A distribution parameter bundle failed validation.
    #[error("invalid parameters: {0}")]
    Parameter(String),
    /// The requested operation is only defined for a sub-family of parameters.
    #[error("unsupported parameter family: {0}")]
    UnsupportedFamily(String),
    /// A series or table was queried outside its defined index range.
    #[error("domain error: {0}")]
    Domain(String),
    /// An operation's usage contract was violated (empty inputs, length mismatch).
    #[error("usage error: {0}")]
    Usage(String),
    /// A numerical routine failed (factorization, non-convergence).
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Simulated data could not be generated for the given specification.
    #[error("generation failed: {0}")]
    Generation(String),
}

pub type Result<T> = core::result::Result<T, Error>;
