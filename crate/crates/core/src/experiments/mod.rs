//! Seeded desk-scale studies: method comparison, prompt templates, quantized
//! base fine-tuning and feature retention. Every run writes a manifest that is
//! enough to reproduce its report body.

mod config;
mod manifest;
mod model_dir;
mod pipeline;
mod report;
mod studies;

pub use config::{CohortSource, ExperimentConfig, ExperimentKind, MaskMode, ModelShape, ThresholdRule};
pub use manifest::{sha256_hex, Manifest, RunRecord};
pub use model_dir::{load_model, train_model, ModelCard, MODEL_CARD};
pub use pipeline::{
    build_examples, build_tokenizer, load_cohort_source, memorization_run, sub_seed, MemorizationResult, PreparedRun,
};
pub use studies::StudyOutput;
pub use report::{ExperimentReport, ReportRow, Timings};
pub use studies::{exp_finetune, exp_main, exp_missing, exp_templates, rerun_from_manifest, run_experiment, write_outputs};

use crate::backends::BackendError;
use crate::baselines::BaselineError;
use crate::cohort::CohortError;
use crate::lm::LmError;
use crate::metrics::MetricError;
use crate::promptgen::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ExperimentError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}
