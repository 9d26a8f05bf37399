use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeError {
    #[error("unsupported parameters: {0}")]
    Params(String),
    #[error("vector of length {len} exceeds {slots} slots")]
    Capacity { len: usize, slots: usize },
    #[error("encoding overflow: |value·scale| reaches {0:e}")]
    Overflow(f64),
    #[error("multiplicative depth budget of {0} exhausted")]
    DepthExhausted(usize),
    #[error("no rotation key for step {0}")]
    MissingRotationKey(usize),
    #[error("operands do not match: {0}")]
    Mismatch(String),
    #[error("malformed ciphertext bytes: {0}")]
    Wire(String),
    #[error("wrong backend: {0}")]
    Backend(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = HeError> = std::result::Result<T, E>;
