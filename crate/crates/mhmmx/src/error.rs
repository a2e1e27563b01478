use thiserror::Error;

/// Errors produced by model construction, data ingestion, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("data error at {location}: {message}")]
    Data { location: String, message: String },

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("non-finite value in parameter block `{0}`")]
    NonFinite(String),

    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("sampler divergence rate {rate:.1}% exceeds 20%; reduce the step size")]
    ExcessiveDivergences { rate: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
