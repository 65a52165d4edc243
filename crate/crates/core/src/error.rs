use thiserror::Error;

#[derive(Debug, Error)]
pub enum PbrError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("theta[{index}] = {value} lies outside [-pi/2, pi/2]")]
    ThetaOutOfRange { index: usize, value: f64 },

    #[error("vector is not unit norm (norm = {0})")]
    NotUnitNorm(f64),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("projection indices are all equal; spline knots are undefined")]
    DegenerateIndices,

    #[error("spline design matrix is singular")]
    SingularDesign,

    #[error("marginal score undefined: S + 2*beta = {0}")]
    NonPositiveScore(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite log-likelihood at iteration {iteration}, observation {observation} (mu = {mu}, sigma2 = {sigma2})")]
    NonFiniteLogLik {
        iteration: usize,
        observation: usize,
        mu: f64,
        sigma2: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PbrError>;
