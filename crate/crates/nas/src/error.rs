use thiserror::Error;

#[derive(Debug, Error)]
pub enum NasError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("config: {0}")]
    Config(String),
    #[error("space holds {size} configurations, more than the limit of {limit}")]
    TooLarge { size: u128, limit: u128 },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Core(#[from] litese_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NasError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NasError::InvalidInput(msg.into()))
}
