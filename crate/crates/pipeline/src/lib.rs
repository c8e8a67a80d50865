//! End-to-end surrogate pipeline: design of experiments, simulation,
//! per-condition Koopman training, ROM and GP fitting, test-time prediction,
//! error metrics and the data-hygiene audit.

pub mod artifacts;
pub mod audit;
pub mod cli;
pub mod config;
pub mod doe;
pub mod error;
pub mod metrics;
pub mod render;
pub mod seqio;
pub mod stages;

pub use artifacts::RunLayout;
pub use audit::{audit_run, AuditReport};
pub use config::{ExperimentConfig, TimeWindow};
pub use doe::{lhs_sample, DesignOfExperiments};
pub use error::{PipelineError, Result, Stage};
pub use metrics::{compute_metrics, relative_error, ErrorReport};
pub use stages::{evaluate, predict_surrogate, run_all, run_training, Surrogate};
