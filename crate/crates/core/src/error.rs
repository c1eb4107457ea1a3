use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (Cholesky pivot {pivot:e} at index {index})")]
    NotPd { index: usize, pivot: f64 },

    #[error("Riccati iteration did not reach a steady state after {iterations} iterations")]
    NoSteadyState { iterations: usize },

    #[error("every decay-rate grid point produced an infeasible LMI")]
    AllInfeasible,

    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
