use imfbo_core::campaign::FieldIssue;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    NotFound(String),

    #[error("invalid config")]
    InvalidConfig(Vec<FieldIssue>),

    #[error("{0}")]
    Conflict(String),

    #[error("policy batch rejected")]
    PolicyRejected(Vec<String>),

    #[error(transparent)]
    Core(#[from] imfbo_core::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
