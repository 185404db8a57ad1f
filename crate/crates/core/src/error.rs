use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("model is not stationary (spectral radius {spectral_radius:.6})")]
    NonStationary { spectral_radius: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("requested {requested} lags but only {available} are available")]
    InsufficientLags { requested: usize, available: usize },

    #[error("degenerate autocovariance: {0}")]
    DegenerateAutocovariance(String),

    #[error("degenerate conditional covariance: {0}")]
    DegenerateConditional(String),

    #[error("model generation failed after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("{n} variables exceeds the permutation search limit of {max}")]
    TooManyVariables { n: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ingestion error at row {row}, column {column}: {reason}")]
    Ingestion {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{0}")]
    Scoring(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid_model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
