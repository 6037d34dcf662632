use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{sha256_hex, CohortSource, ExperimentConfig, ExperimentError, Manifest, ModelShape, RunRecord, ThresholdRule};
use crate::backends::{classify_many, LocalBackend};
use crate::baselines::{labels, train_logreg, train_mlp, Featurizer};
use crate::cohort::{load_cohort, make_splits, synth_cohort, Cohort, Record, Schema, SplitPlan, SynthConfig};
use crate::lm::{
    encode_example, load_adapter, save_adapter, save_base, save_quantized, train_sft, Example, History, LoraAdapter, LoraConfig,
    ModelParams, QuantizedModel, Tokenizer, TrainConfig,
};
use crate::metrics::{evaluate, roc_auc, youden_threshold, MetricReport, RocCurve, ScoredSet};
use crate::promptgen::{build_sft, mask_features, oversample_minority, verbalize, NarrativeMode, SftRecord, TemplateKind, NO, YES};

/// Independent stream seed for one purpose within a run.
pub fn sub_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn load_cohort_source(src: &CohortSource) -> Result<Cohort, ExperimentError> {
    match src {
        CohortSource::Synthetic { preset, n, seed } => {
            let mut cfg = SynthConfig::resolve(preset)?;
            if let Some(n) = n {
                cfg.n = *n;
            }
            Ok(synth_cohort(&cfg, *seed)?.cohort)
        }
        CohortSource::File { path, schema } => Ok(load_cohort(Path::new(path), &Schema::resolve(schema)?)?),
    }
}

/// Vocabulary of a training corpus; both verbalizers are always present.
pub fn build_tokenizer(corpus: &[SftRecord]) -> Tokenizer {
    let mut texts: Vec<String> = corpus.iter().map(|r| format!("{}{}", r.prompt(), verbalize(&r.output))).collect();
    texts.push(format!("{}{}", verbalize(YES), verbalize(NO)));
    Tokenizer::build(texts.iter().map(String::as_str), 1)
}

pub fn build_examples(tok: &Tokenizer, corpus: &[SftRecord]) -> Result<Vec<Example>, ExperimentError> {
    Ok(corpus.iter().map(|r| encode_example(tok, &r.prompt(), &verbalize(&r.output))).collect::<Result<_, _>>()?)
}

fn hash_corpus(corpus: &[SftRecord]) -> String {
    let mut h = Sha256::new();
    for r in corpus {
        h.update(serde_json::to_string(r).expect("record serializes").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn hash_split(split: &SplitPlan) -> String {
    sha256_hex(serde_json::to_string(split).expect("split serializes").as_bytes())
}

/// Per-run state shared across the conditions of one seed.
pub(crate) struct Ctx<'a> {
    pub config: &'a ExperimentConfig,
    pub cohort: &'a Cohort,
    pub out: &'a Path,
    /// Manifest of an earlier run whose checkpoints may be reused.
    pub prior: Option<(&'a Manifest, PathBuf)>,
}

pub(crate) fn records<'a>(cohort: &'a Cohort, ids: &[String]) -> Vec<&'a Record> {
    ids.iter().map(|id| cohort.get(id).expect("split ids come from the cohort")).collect()
}

pub(crate) fn masked(records: &[&Record], schema: &Schema, retain: f64, seed: u64) -> Result<Vec<Record>, ExperimentError> {
    Ok(records.iter().map(|r| mask_features(r, schema, retain, seed)).collect::<Result<_, _>>()?)
}

pub(crate) fn sft_records(records: &[Record], schema: &Schema, template: TemplateKind) -> Result<Vec<SftRecord>, ExperimentError> {
    Ok(records.iter().map(|r| build_sft(r, schema, template, &NarrativeMode::Fallback)).collect::<Result<_, _>>()?)
}

/// A trained adapter plus everything needed to score with it.
pub struct PreparedRun {
    pub seed: u64,
    pub tokenizer: Arc<Tokenizer>,
    pub base: Arc<ModelParams<f32>>,
    pub adapter: Option<Arc<LoraAdapter<f32>>>,
    pub history: Option<History>,
    pub record: RunRecord,
    pub train_seconds: f64,
    pub base_bytes: usize,
}

impl PreparedRun {
    pub fn trainable_bytes(&self) -> Option<usize> {
        self.adapter.as_ref().map(|a| a.bytes())
    }

    fn backend(&self, with_adapter: bool) -> LocalBackend<f32> {
        LocalBackend::new(
            self.record.label.clone(),
            self.tokenizer.clone(),
            self.base.clone(),
            if with_adapter { self.adapter.clone() } else { None },
        )
    }

    /// P(yes) per prompt.
    pub fn score(&self, prompts: &[String], with_adapter: bool) -> Result<Vec<f64>, ExperimentError> {
        Ok(classify_many(&self.backend(with_adapter), prompts)?.into_iter().map(|s| s.p_yes).collect())
    }
}

fn file_hash(path: &Path) -> Result<String, ExperimentError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| ExperimentError::io(path, e))?))
}

impl Ctx<'_> {
    pub fn checkpoint_dir(&self) -> Result<PathBuf, ExperimentError> {
        let dir = self.out.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| ExperimentError::io(&dir, e))?;
        Ok(dir)
    }

    /// An adapter recorded by the prior manifest, if its file is intact.
    fn cached_adapter(&self, label: &str, seed: u64) -> Option<LoraAdapter<f32>> {
        let (m, dir) = self.prior.as_ref()?;
        let (file, hash) = m.run(label, seed)?.adapter_checkpoint.clone()?;
        let path = dir.join("checkpoints").join(&file);
        if file_hash(&path).ok()? != hash {
            log::warn!("{}: checksum differs from manifest, retraining", path.display());
            return None;
        }
        load_adapter::<f32>(&path).ok()
    }

    /// Corpus, tokenizer, base init and LoRA training for one condition.
    /// `train_records` are used as given (already masked when requested).
    pub fn prepare(
        &self,
        label: &str,
        seed: u64,
        split: &SplitPlan,
        train_records: &[Record],
        template: TemplateKind,
        quantized: bool,
        context_len: usize,
    ) -> Result<PreparedRun, ExperimentError> {
        let cfg = self.config;
        let mut corpus = sft_records(train_records, &self.cohort.schema, template)?;
        if let Some(ratio) = cfg.balance_ratio {
            corpus = oversample_minority(&corpus, ratio);
        }
        let tok = build_tokenizer(&corpus);
        let examples = build_examples(&tok, &corpus)?;
        let model = cfg.model.with_corpus(tok.len(), context_len);
        let dense = ModelParams::<f32>::init(model, sub_seed(seed, "base"))?;
        let dir = self.checkpoint_dir()?;
        let stem = format!("{label}-s{seed}");
        let (base, base_file, base_bytes) = if quantized {
            let q = QuantizedModel::from_params(&dense)?;
            let path = dir.join(format!("{stem}.q4"));
            save_quantized(&path, &q)?;
            (q.dequantize::<f32>()?, path, q.stored_bytes())
        } else {
            let path = dir.join(format!("{stem}.base"));
            save_base(&path, &dense)?;
            let bytes = 4 * dense.num_params();
            (dense, path, bytes)
        };
        let tc = TrainConfig { seed: sub_seed(seed, "train"), ..cfg.train.clone() };
        let lc = LoraConfig { seed: sub_seed(seed, "lora"), ..cfg.lora.clone() };
        let started = Instant::now();
        let (adapter, history) = match self.cached_adapter(label, seed) {
            Some(a) => (a, None),
            None => {
                let t = train_sft(&base, &examples, &tc, &lc)?;
                log::info!("{label} seed {seed}: final loss {:?}", t.history.final_loss());
                (t.adapter, Some(t.history))
            }
        };
        let train_seconds = started.elapsed().as_secs_f64();
        let adapter_path = dir.join(format!("{stem}.adapter"));
        save_adapter(&adapter_path, &adapter)?;
        tok.save(&dir.join(format!("{stem}.vocab")))?;
        let name = |p: &Path| p.file_name().expect("file").to_string_lossy().into_owned();
        let record = RunRecord {
            label: label.to_string(),
            seed,
            split_hash: hash_split(split),
            corpus_hash: Some(hash_corpus(&corpus)),
            tokenizer_hash: Some(sha256_hex(tok.tokens().join("\n").as_bytes())),
            base_checkpoint: Some((name(&base_file), file_hash(&base_file)?)),
            adapter_checkpoint: Some((name(&adapter_path), file_hash(&adapter_path)?)),
        };
        Ok(PreparedRun {
            seed,
            tokenizer: Arc::new(tok),
            base: Arc::new(base),
            adapter: Some(Arc::new(adapter)),
            history,
            record,
            train_seconds,
            base_bytes,
        })
    }

    /// Scores `eval` records and turns them into a metric report.
    pub fn evaluate(&self, scores: Vec<f64>, eval: &[Record], threshold: f64, seed: u64) -> Result<(MetricReport, RocCurve), ExperimentError> {
        let ids = eval.iter().map(|r| r.patient_id.clone()).collect();
        let set = ScoredSet::new(scores, labels(eval)?, ids)?;
        let report = evaluate(&set, threshold, self.config.bootstrap_resamples, sub_seed(seed, "bootstrap"))?;
        Ok((report, roc_auc(&set)?.0))
    }

    /// Fixed threshold, or Youden's J on training scores computed lazily.
    pub fn threshold(&self, train_scores: impl FnOnce() -> Result<(Vec<f64>, Vec<bool>), ExperimentError>) -> Result<f64, ExperimentError> {
        match self.config.threshold {
            ThresholdRule::Fixed { value } => Ok(value),
            ThresholdRule::Youden => {
                let (s, l) = train_scores()?;
                Ok(youden_threshold(&ScoredSet::unnamed(s, l)?)?)
            }
        }
    }
}

/// Longest prompt (with BOS and answer) over every record of the cohort under
/// any template, plus slack for unseen pieces.
pub(crate) fn context_for(cohort: &Cohort, templates: &[TemplateKind]) -> Result<usize, ExperimentError> {
    let mut longest = 0;
    for &t in templates {
        for r in &cohort.records {
            let rendered = build_sft(r, &cohort.schema, t, &NarrativeMode::Fallback)?;
            longest = longest.max(crate::lm::pieces(&rendered.prompt()).len());
        }
    }
    Ok(longest + 8)
}

pub(crate) fn split_for(cohort: &Cohort, seed: u64) -> Result<SplitPlan, ExperimentError> {
    Ok(make_splits(cohort, sub_seed(seed, "split"))?)
}

/// Logistic regression and MLP fitted on `train`, scored on `eval`.
pub(crate) struct BaselineScores {
    pub logreg: (Vec<f64>, f64),
    pub mlp: (Vec<f64>, f64),
}

pub(crate) fn baseline_scores(
    ctx: &Ctx<'_>,
    train: &[&Record],
    eval: &[Record],
    seed: u64,
) -> Result<(BaselineScores, f64, f64), ExperimentError> {
    let feat = Featurizer::fit_records(&ctx.cohort.schema, train)?;
    let x: Array2<f64> = feat.matrix(train.iter().copied())?;
    let y = labels(train.iter().copied())?;
    let xe = feat.matrix(eval.iter())?;

    let t0 = Instant::now();
    let lr = train_logreg(x.view(), &y, &ctx.config.logreg)?;
    let lr_thr = ctx.threshold(|| Ok((lr.predict(x.view()), y.clone())))?;
    let lr_scores = lr.predict(xe.view());
    let lr_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let mlp = train_mlp(x.view(), &y, &ctx.config.mlp, sub_seed(seed, "mlp"))?;
    let mlp_thr = ctx.threshold(|| Ok((mlp.predict(x.view()), y.clone())))?;
    let mlp_scores = mlp.predict(xe.view());
    let mlp_secs = t0.elapsed().as_secs_f64();
    Ok((BaselineScores { logreg: (lr_scores, lr_thr), mlp: (mlp_scores, mlp_thr) }, lr_secs, mlp_secs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationResult {
    pub quantized: bool,
    pub final_loss: f64,
    pub history: History,
    pub wall_seconds: f64,
    pub base_bytes: usize,
    pub dense_bytes: usize,
}

/// Fits an adapter to a single SFT example on a dense or 4-bit base built
/// from the same seed.
pub fn memorization_run(
    record: &SftRecord,
    shape: ModelShape,
    tc: &TrainConfig,
    lc: &LoraConfig,
    seed: u64,
    quantized: bool,
) -> Result<MemorizationResult, ExperimentError> {
    let corpus = std::slice::from_ref(record);
    let tok = build_tokenizer(corpus);
    let examples = build_examples(&tok, corpus)?;
    let model = shape.with_corpus(tok.len(), examples[0].ids.len());
    let dense = ModelParams::<f32>::init(model, seed)?;
    let dense_bytes = 4 * dense.num_params();
    let started = Instant::now();
    let (base, base_bytes) = if quantized {
        let q = QuantizedModel::from_params(&dense)?;
        (q.dequantize::<f32>()?, q.stored_bytes())
    } else {
        (dense, dense_bytes)
    };
    let trained = train_sft(&base, &examples, tc, lc)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    let final_loss = trained.history.final_loss().unwrap_or(f64::NAN);
    Ok(MemorizationResult { quantized, final_loss, history: trained.history, wall_seconds, base_bytes, dense_bytes })
}
