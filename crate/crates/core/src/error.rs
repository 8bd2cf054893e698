use thiserror::Error;

/// Errors raised anywhere in the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure in {what} (condition estimate {condition:.3e})")]
    NumericalFailure { what: String, condition: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: String, iterations: usize },

    #[error("MSE budget {beta} is below the minimum achievable MSE {min_achievable:.6e}")]
    InfeasibleBudget { beta: f64, min_achievable: f64 },

    #[error("decode failure: {0}")]
    Decode(String),

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(String),

    #[error("relaxation inconsistency at step {step}: min eigenvalue of Q** - Q* is {min_eig:.3e}")]
    RelaxationInconsistency { step: usize, min_eig: f64 },

    #[error("EKF diverged at step {step}: trace(P) = {trace:.3e}")]
    EkfDivergence { step: usize, trace: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
