//! Records to prompts: the List, Text and Narrative templates, SFT triples,
//! corpus files and feature masking.

mod mask;
mod narrative;
mod render;
mod sft;

use std::path::Path;

pub use mask::{kept_features, mask_features, retained_count, MaskPlan};
pub use narrative::{cache_key, coverage_warnings, render_narrative, NarrativeMode, FALLBACK_VERSION, META_PROMPT};
pub use render::{render_list, render_text, Rendered};
pub use sft::{
    build_corpus, build_sft, emit_corpus, format_prompt, oversample_minority, read_corpus, render, verbalize,
    write_corpus, SftRecord, TemplateKind, INSTRUCTION, NO, YES,
};

use crate::backends::BackendError;
use crate::cohort::CohortError;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error("record {0} is unlabeled")]
    Unlabeled(String),
    #[error("patient id {0:?} not in cohort")]
    UnknownId(String),
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("retain ratio {0} outside (0, 1]")]
    RetainRatio(f64),
    #[error("narrative generation failed: {0}")]
    Remote(BackendError),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PromptError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PromptError::Io { path: path.display().to_string(), source }
    }
}
