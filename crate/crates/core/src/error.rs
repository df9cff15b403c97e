use thiserror::Error;

/// Errors surfaced by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("state propagation diverged at step {index} (|x| non-finite or above {limit:e})")]
    PropagationDiverged { index: usize, limit: f64 },

    #[error("adjoint propagation diverged at step {index}")]
    AdjointDiverged { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("basis has {m} functions but the grid only has {n} intervals")]
    OverParameterized { m: usize, n: usize },

    #[error("metric is singular or indefinite; set a positive Hessian regularization")]
    SingularMetric,

    #[error("grid adaptation produced non-increasing nodes at index {index}")]
    DegenerateGrid { index: usize },

    #[error("mismatched horizons: coarse [{0}, {1}] vs fine [{2}, {3}]")]
    MismatchedHorizons(f64, f64, f64, f64),

    #[error("invalid refinement schedule: {0}")]
    InvalidSchedule(String),

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
