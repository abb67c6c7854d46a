use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-positive density value {value} in cell {cell}")]
    NonPositive { cell: usize, value: f64 },

    #[error("non-finite value in cell {cell}")]
    NonFinite { cell: usize },

    #[error("observation {value} outside the grid interval [{lower}, {upper}]")]
    OutOfRange { value: f64, lower: f64, upper: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "at least two groups are required for kernel density initialization (found {0}); use init_identity instead"
    )]
    TooFewGroups(usize),

    #[error("retained component {component} has zero prior variance")]
    ZeroVariance { component: usize },

    #[error("retained component {component} has infinite prior variance; the score posterior may have no mode")]
    ImproperPrior { component: usize },

    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("empty group at index {0}")]
    EmptyGroup(usize),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
