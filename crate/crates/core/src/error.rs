use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column not found: {0}")]
    ColumnNotFound(String),

    #[error("zero rows")]
    ZeroRows,

    #[error("all rows missing")]
    AllMissing,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-positive observed value {value} at index {index}")]
    NonPositive { index: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-stationary AR coefficients: {0:?}")]
    NonStationary(Vec<f64>),

    #[error("innovation variance {variance} is not positive at n={n}")]
    NonPositiveVariance { n: usize, variance: f64 },

    #[error("non-finite value in {stage} at n={n}")]
    NonFinite { stage: &'static str, n: usize },

    #[error("rank-deficient design: singular value {singular_value:e} at column {column}")]
    RankDeficient { column: usize, singular_value: f64 },

    #[error("subset search too large: 2^{0} candidates exceeds the 2^20 guard")]
    SubsetGuard(usize),

    #[error("optimizer: {0}")]
    Optimizer(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }
}
