use thiserror::Error;

/// Errors raised by grid construction, model evaluation and the linear solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A standing assumption on the data (positivity floor, ellipticity, ...) fails.
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// A coupling function could not be evaluated on its (clamped) arguments.
    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("linear solver did not converge at slice {slice}: relative residual {residual:e}")]
    SolverFailure { slice: usize, residual: f64 },

    #[error("non-finite value produced at slice {slice}")]
    NonFinite { slice: usize },

    #[error("time step {dt:e} exceeds the positivity restriction {limit:e}")]
    TimeStepRestriction { dt: f64, limit: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
