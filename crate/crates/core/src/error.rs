use thiserror::Error;

/// Errors raised by the kernel, quadrature, and expansion routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel parameters come from different dictionaries")]
    MixedFamily,

    #[error("kernel norm underflowed ({0:e})")]
    DegenerateKernel(f64),

    #[error("finite-difference step {step:e} leaves the parameter domain at {param:e}")]
    StepUnderflow { param: f64, step: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance is not positive semidefinite (pivot {index} = {pivot:e})")]
    NotPsd { index: usize, pivot: f64 },

    #[error("candidate is linearly dependent on the current system (denominator {denominator:e} <= {threshold:e})")]
    DegenerateCandidate { denominator: f64, threshold: f64 },

    #[error("every candidate is degenerate against the current system")]
    AllDegenerate,

    #[error("no progress at iteration {iteration}: objective {objective:e} with relative error {relative_error:e}")]
    NoProgress {
        iteration: usize,
        objective: f64,
        relative_error: f64,
    },

    #[error("triangular system is singular at row {index} (diagonal {diagonal:e})")]
    SingularSystem { index: usize, diagonal: f64 },

    #[error("signal has zero norm")]
    ZeroSignal,
}

pub type Result<T> = std::result::Result<T, Error>;
