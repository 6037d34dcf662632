//! Tabular cohorts: schema, ingest and re-emit, baseline characteristics,
//! synthetic generation and train/test/fold splits.

mod baseline;
mod record;
mod schema;
mod split;
pub mod stats;
mod synth;

use std::path::Path;

pub use baseline::{baseline_table, BaselineRow, BaselineTable, LevelRow, NumericSummary, MISSING_LEVEL};
pub use record::{
    load_cohort, read_cohort, Cohort, CsvOptions, Label, Numeric, Provenance, Record, Value,
    DEFAULT_ID_COLUMN, DEFAULT_LABEL_COLUMN,
};
pub use schema::{Category, FeatureKind, FeatureSpec, Schema, BUILTIN_SCHEMAS, PLACEHOLDER};
pub use split::{make_splits, SplitPlan, N_FOLDS};
pub use synth::{
    oracle_risk, sigmoid, synth_cohort, FeatureGen, LevelGen, Marginal, SynthCohort, SynthConfig, PRESETS,
};

#[derive(Debug, thiserror::Error)]
pub enum CohortError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate patient id {0:?}")]
    DuplicateId(String),
    #[error("record {patient_id}: invalid value {value:?} for {feature}")]
    InvalidValue { patient_id: String, feature: String, value: String },
    #[error("generator config error: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("baseline table needs at least one record per label group")]
    EmptyGroup,
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CohortError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CohortError::Io { path: path.display().to_string(), source }
    }
}

impl From<csv::Error> for CohortError {
    fn from(e: csv::Error) -> Self {
        CohortError::Csv(e.to_string())
    }
}
