use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stages, used to label failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    TrainKae,
    Forecast,
    TrainRom,
    TrainGp,
    Predict,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::TrainKae => "train_kae",
            Stage::Forecast => "forecast",
            Stage::TrainRom => "train_rom",
            Stage::TrainGp => "train_gp",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input `{}`", path.display())]
    MissingInput { path: PathBuf },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("reference field at t = {t} has zero norm")]
    DegenerateReference { t: i64 },

    #[error("data hygiene audit failed: {0}")]
    Hygiene(String),

    #[error("malformed artifact: {0}")]
    Format(String),

    #[error("{} failed{}: {source}", stage.name(), condition.map(|re| format!(" for Re = {re}")).unwrap_or_default())]
    Stage {
        stage: Stage,
        condition: Option<f64>,
        #[source]
        source: Box<PipelineError>,
    },

    #[error(transparent)]
    Lbm(#[from] pistm_lbm::LbmError),

    #[error(transparent)]
    Surrogate(#[from] pistm_surrogate::SurrogateError),

    #[error(transparent)]
    Core(#[from] pistm_core::CoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Wraps an error with the stage (and condition) it occurred in.
    pub fn in_stage(self, stage: Stage, condition: Option<f64>) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                condition,
                source: Box::new(e),
            },
        }
    }

    /// Machine-readable error category, e.g. `io.missing_input`.
    pub fn category(&self) -> String {
        use pistm_surrogate::SurrogateError as S;
        match self {
            PipelineError::MissingInput { .. } => "io.missing_input".into(),
            PipelineError::Config(_) => "config.invalid".into(),
            PipelineError::Contract(_) => "contract.violation".into(),
            PipelineError::DegenerateReference { .. } => "metrics.degenerate_reference".into(),
            PipelineError::Hygiene(_) => "audit.hygiene".into(),
            PipelineError::Format(_) | PipelineError::Json(_) => "io.format".into(),
            PipelineError::Io(_) => "io.error".into(),
            PipelineError::Lbm(pistm_lbm::LbmError::Unstable { .. }) => "simulate.unstable".into(),
            PipelineError::Lbm(_) => "simulate.invalid".into(),
            PipelineError::Surrogate(S::Diverged(_)) => "training.diverged".into(),
            PipelineError::Surrogate(S::Fit(_)) => "gp.fit_failed".into(),
            PipelineError::Surrogate(S::Io(_)) => "io.error".into(),
            PipelineError::Surrogate(S::Format(_)) => "io.format".into(),
            PipelineError::Surrogate(_) | PipelineError::Core(_) => "contract.violation".into(),
            PipelineError::Stage { source, .. } => source.category(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PipelineError::Config(msg.into()))
}
