use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    He(#[from] held_he::HeError),
    #[error(transparent)]
    Core(#[from] held_core::Error),
    #[error("transport: {0}")]
    Transport(String),
    /// Peer closed the channel between messages.
    #[error("peer closed the channel")]
    Closed,
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("unexpected message: {0}")]
    Unexpected(String),
    #[error("dimension mismatch: {0}")]
    Dim(String),
    /// Inference attempted with keys that were already used for training.
    #[error("stale keys: key {0:016x} was used in an earlier session")]
    StaleKeys(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        ProtocolError::Transport(e.to_string())
    }
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;
