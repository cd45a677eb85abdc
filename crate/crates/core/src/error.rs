use thiserror::Error;

/// Errors raised by the model, filters, network and scenario builders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// The input sits on a singularity of the model (e.g. a stopped object).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A matrix that must be symmetric positive definite is not, or a
    /// factorization failed.
    #[error("numerical conditioning: {0}")]
    Conditioning(String),

    /// A scenario, topology or consensus configuration is unusable.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument violates a documented precondition.
    #[error("validation failed: {0}")]
    Validation(String),
}

impl Error {
    /// Short machine-readable category, used by the CLI for exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateInput(_) => "degenerate-input",
            Error::Conditioning(_) => "conditioning",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
