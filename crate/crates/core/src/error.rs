use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("covariance factorization failed (sigma2={sigma2}, length_scales={length_scales:?}, delta={delta}, noise2={noise2})")]
    Factorization {
        sigma2: f64,
        length_scales: Vec<f64>,
        delta: f64,
        noise2: f64,
    },

    #[error("MCMC failure: {message} (warmup acceptance {warmup_acceptance:.3}, sampling acceptance {sampling_acceptance:.3})")]
    Mcmc {
        message: String,
        warmup_acceptance: f64,
        sampling_acceptance: f64,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("x = {x} is outside the objective domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("policy change rejected: {0}")]
    PolicyRejected(String),

    #[error("campaign is not runnable in status {0}")]
    InvalidStatus(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported schema version {found} (this build reads version {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("missing ground truth for objective {0}")]
    MissingGroundTruth(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
