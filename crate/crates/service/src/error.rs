use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, ServiceError>;

impl From<nuclick_core::Error> for ServiceError {
    fn from(e: nuclick_core::Error) -> Self {
        match e {
            nuclick_core::Error::NotFound(m) => ServiceError::NotFound(m),
            nuclick_core::Error::InvalidInput(_) | nuclick_core::Error::SizeMismatch { .. } | nuclick_core::Error::Image(_) => {
                ServiceError::Invalid(e.to_string())
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<nuclick_pipeline::PipelineError> for ServiceError {
    fn from(e: nuclick_pipeline::PipelineError) -> Self {
        match e {
            nuclick_pipeline::PipelineError::Core(c) => c.into(),
            nuclick_pipeline::PipelineError::Net(nuclick_net::NetError::InvalidInput(m)) => ServiceError::Invalid(m),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}
