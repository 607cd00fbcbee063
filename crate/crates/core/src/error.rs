use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has empty support")]
    EmptySupport,

    #[error("negative weight {value} at index {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("weights sum to zero")]
    ZeroMass,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires one-dimensional measures, got d = {0}")]
    NotOneDimensional(usize),

    #[error("plan marginals do not match the measures (residual {0:e})")]
    MarginalMismatch(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exhaustive search limited to {max} points, got {n}")]
    TooLarge { n: usize, max: usize },

    #[error("exhaustive search requires uniform weights")]
    NonUniform,

    #[error("singular scaling matrix")]
    Singular,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
