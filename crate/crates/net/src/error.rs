use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Core(#[from] nuclick_core::Error),
}

/// Checkpoint load failures, kept distinct so callers can tell a foreign
/// file from a damaged one.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint or unsupported version: {0}")]
    Version(String),
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("checkpoint manifest does not match its config: {0}")]
    Manifest(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NetError>;

pub(crate) fn invalid(msg: impl Into<String>) -> NetError {
    NetError::InvalidInput(msg.into())
}
