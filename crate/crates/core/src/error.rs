use thiserror::Error;

/// Errors raised by the library. Solver non-convergence is not an error:
/// it is reported through the `converged` flag of the step result.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("density value at index {index} is invalid ({value})")]
    InvalidDensity { index: usize, value: f64 },

    #[error("density has {got} values but the grid has {expected} cells")]
    LengthMismatch { expected: usize, got: usize },

    #[error("density mass {mass} deviates from 1 by more than {tolerance}")]
    MassMismatch { mass: f64, tolerance: f64 },

    #[error("densities live on different grids")]
    GridMismatch,

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
