use thiserror::Error;

#[derive(Debug, Error)]
pub enum LbmError {
    #[error("velocity {speed} violates the low-Mach bound |u| < 0.3")]
    LowMach { speed: f64 },

    #[error("simulation unstable at step {step} (max |u| = {max_speed})")]
    Unstable { step: u64, max_speed: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("probe signal has {len} samples, at least {min} are required")]
    ShortSignal { len: usize, min: usize },

    #[error(transparent)]
    Core(#[from] pistm_core::CoreError),
}

pub type Result<T> = std::result::Result<T, LbmError>;
