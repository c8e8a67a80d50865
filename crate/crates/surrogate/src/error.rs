use pistm_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("GP fit failed: {0}")]
    Fit(String),

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SurrogateError {
    /// Lifts optimizer divergence out of the core error so callers can match on it.
    pub(crate) fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::Diverged(m) => Self::Diverged(m),
            other => Self::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, SurrogateError>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(SurrogateError::Contract(msg.into()))
}
