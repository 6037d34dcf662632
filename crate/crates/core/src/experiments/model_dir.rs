use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::pipeline::{records, split_for, Ctx};
use super::{CohortSource, ExperimentConfig, ExperimentError, Manifest, PreparedRun};
use crate::backends::LocalBackend;
use crate::cohort::{Cohort, Record};
use crate::lm::{load_adapter, load_base, Tokenizer};
use crate::promptgen::TemplateKind;

pub const MODEL_CARD: &str = "model.json";

/// Describes a trained model directory written by [`train_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub label: String,
    pub seed: u64,
    /// Cohort the model was trained on; its split follows from `seed`.
    pub cohort: CohortSource,
    pub template: TemplateKind,
    pub quantized: bool,
    pub context_len: usize,
    /// Paths relative to the directory holding the card.
    pub base: String,
    pub adapter: String,
    pub vocab: String,
    pub final_loss: Option<f64>,
}

/// Fits an adapter on the training split of `config.seeds[0]` and writes the
/// checkpoints, `model.json` and `manifest.json` under `out`.
pub fn train_model(config: &ExperimentConfig, cohort: &Cohort, out: &Path, quantized: bool) -> Result<(ModelCard, PreparedRun), ExperimentError> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let seed = config.seeds[0];
    let ctx = Ctx { config, cohort, out, prior: None };
    let split = split_for(cohort, seed)?;
    let train: Vec<Record> = records(cohort, &split.train_ids).into_iter().cloned().collect();
    let context_len = super::pipeline::context_for(cohort, &[config.template])?;
    let label = if quantized { "model-q4" } else { "model" };
    let run = ctx.prepare(label, seed, &split, &train, config.template, quantized, context_len)?;
    let rel = |p: &Option<(String, String)>| format!("checkpoints/{}", p.as_ref().expect("prepare records checkpoints").0);
    let card = ModelCard {
        label: label.to_string(),
        seed,
        cohort: config.cohort.clone(),
        template: config.template,
        quantized,
        context_len,
        base: rel(&run.record.base_checkpoint),
        adapter: rel(&run.record.adapter_checkpoint),
        vocab: format!("checkpoints/{label}-s{seed}.vocab"),
        final_loss: run.history.as_ref().and_then(|h| h.final_loss()),
    };
    let write = |name: &str, body: String| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| ExperimentError::io(&p, e))
    };
    write(MODEL_CARD, serde_json::to_string_pretty(&card).expect("card serializes") + "\n")?;
    let mut manifest = Manifest::new(super::ExperimentKind::Main, config, cohort.content_hash());
    manifest.runs.push(run.record.clone());
    write("manifest.json", manifest.to_json())?;
    Ok((card, run))
}

/// Loads a directory written by [`train_model`] as a scoring backend.
pub fn load_model(dir: &Path, with_adapter: bool) -> Result<(ModelCard, LocalBackend<f32>), ExperimentError> {
    let card_path = dir.join(MODEL_CARD);
    let src = std::fs::read_to_string(&card_path).map_err(|e| ExperimentError::io(&card_path, e))?;
    let card: ModelCard = serde_json::from_str(&src).map_err(|e| ExperimentError::Config(format!("{}: {e}", card_path.display())))?;
    let at = |rel: &str| -> PathBuf { dir.join(rel) };
    let tokenizer = Tokenizer::load(&at(&card.vocab))?;
    let base = load_base(&at(&card.base))?.to_params::<f32>()?;
    let adapter = if with_adapter { Some(Arc::new(load_adapter::<f32>(&at(&card.adapter))?)) } else { None };
    let backend = LocalBackend::new(card.label.clone(), Arc::new(tokenizer), Arc::new(base), adapter);
    Ok((card, backend))
}
