use std::path::{Path, PathBuf};

use super::pipeline::{baseline_scores, context_for, masked, records, sft_records, split_for, Ctx};
use super::report::Timings;
use super::{sub_seed, ExperimentConfig, ExperimentError, ExperimentKind, ExperimentReport, Manifest, MaskMode, PreparedRun, ReportRow};
use crate::cohort::{Cohort, Record};
use crate::metrics::{auc_oracle, MetricReport, RocCurve, ScoredSet};
use crate::promptgen::TemplateKind;

type Eval = (MetricReport, RocCurve);

/// Collects per-seed evaluations under stable row names.
#[derive(Default)]
struct Rows {
    order: Vec<String>,
    evals: Vec<(String, u64, Eval)>,
    trainable: Vec<(String, usize)>,
    base: Vec<(String, usize)>,
    retain: Vec<(String, f64)>,
}

impl Rows {
    fn push(&mut self, name: &str, seed: u64, eval: Eval) {
        if !self.order.iter().any(|n| n == name) {
            self.order.push(name.to_string());
        }
        self.evals.push((name.to_string(), seed, eval));
    }

    fn finish(self) -> Result<Vec<ReportRow>, ExperimentError> {
        let mut rows = Vec::new();
        for name in &self.order {
            let mine: Vec<&(String, u64, Eval)> = self.evals.iter().filter(|(n, _, _)| n == name).collect();
            let seeds = mine.iter().map(|(_, s, _)| *s).collect();
            let reports = mine.iter().map(|(_, _, (r, _))| r.clone()).collect();
            let roc = mine.first().map(|(_, _, (_, c))| c.clone());
            let mut row = ReportRow::new(name.clone(), seeds, reports, roc)?;
            row.trainable_bytes = self.trainable.iter().find(|(n, _)| n == name).map(|(_, b)| *b);
            row.base_bytes = self.base.iter().find(|(n, _)| n == name).map(|(_, b)| *b);
            row.retain = self.retain.iter().find(|(n, _)| n == name).map(|(_, r)| *r);
            rows.push(row);
        }
        Ok(rows)
    }
}

struct Study<'a> {
    ctx: Ctx<'a>,
    manifest: Manifest,
    timings: Timings,
    rows: Rows,
    oracle: Vec<(u64, f64)>,
    notes: Vec<String>,
    context_len: usize,
}

impl<'a> Study<'a> {
    fn new(
        kind: ExperimentKind,
        config: &'a ExperimentConfig,
        cohort: &'a Cohort,
        out: &'a Path,
        prior: Option<(&'a Manifest, PathBuf)>,
        templates: &[TemplateKind],
    ) -> Result<Self, ExperimentError> {
        config.validate()?;
        let cohort_hash = cohort.content_hash();
        if let Some((m, _)) = &prior {
            if m.cohort_hash != cohort_hash {
                return Err(ExperimentError::Manifest(format!("cohort hash {cohort_hash} differs from recorded {}", m.cohort_hash)));
            }
        }
        Ok(Self {
            ctx: Ctx { config, cohort, out, prior },
            manifest: Manifest::new(kind, config, cohort_hash),
            timings: Timings::default(),
            rows: Rows::default(),
            oracle: Vec::new(),
            notes: Vec::new(),
            context_len: context_for(cohort, templates)?,
        })
    }

    fn prepare(&mut self, label: &str, seed: u64, split: &crate::cohort::SplitPlan, train: &[Record], template: TemplateKind, quantized: bool) -> Result<PreparedRun, ExperimentError> {
        let run = self.ctx.prepare(label, seed, split, train, template, quantized, self.context_len)?;
        self.manifest.runs.push(run.record.clone());
        Ok(run)
    }

    fn record_oracle(&mut self, seed: u64, test: &[&Record]) -> Result<(), ExperimentError> {
        if self.ctx.cohort.oracle.is_none() {
            return Ok(());
        }
        let scores = test.iter().map(|r| self.ctx.cohort.oracle_for(&r.patient_id).expect("synthetic record")).collect();
        let labels = test.iter().map(|r| r.label.as_bit() == Some(1)).collect();
        self.oracle.push((seed, auc_oracle(&ScoredSet::unnamed(scores, labels)?)?));
        Ok(())
    }

    /// LM scores on `eval`, with the threshold chosen per the config.
    fn lm_eval(&mut self, row: &str, run: &PreparedRun, train: &[Record], eval: &[Record], template: TemplateKind, with_adapter: bool) -> Result<Eval, ExperimentError> {
        let started = std::time::Instant::now();
        let schema = &self.ctx.cohort.schema;
        let prompts: Vec<String> = sft_records(eval, schema, template)?.iter().map(|r| r.prompt()).collect();
        let scores = run.score(&prompts, with_adapter)?;
        let threshold = self.ctx.threshold(|| {
            let tp: Vec<String> = sft_records(train, schema, template)?.iter().map(|r| r.prompt()).collect();
            Ok((run.score(&tp, with_adapter)?, crate::baselines::labels(train)?))
        })?;
        let out = self.ctx.evaluate(scores, eval, threshold, run.seed)?;
        self.timings.add(row, started.elapsed().as_secs_f64());
        Ok(out)
    }

    fn baselines(&mut self, names: [&str; 2], seed: u64, train: &[&Record], eval: &[Record]) -> Result<[Eval; 2], ExperimentError> {
        let (b, lr_secs, mlp_secs) = baseline_scores(&self.ctx, train, eval, seed)?;
        self.timings.add(names[0], lr_secs);
        self.timings.add(names[1], mlp_secs);
        let lr = self.ctx.evaluate(b.logreg.0, eval, b.logreg.1, seed)?;
        let mlp = self.ctx.evaluate(b.mlp.0, eval, b.mlp.1, seed)?;
        Ok([lr, mlp])
    }

    fn finish(self, kind: ExperimentKind) -> Result<(ExperimentReport, Manifest, Timings), ExperimentError> {
        let report = ExperimentReport {
            experiment: kind,
            cohort_hash: self.manifest.cohort_hash.clone(),
            rows: self.rows.finish()?,
            oracle_auc: self.oracle,
            notes: self.notes,
        };
        Ok((report, self.manifest, self.timings))
    }
}

fn lm_label(template: TemplateKind) -> String {
    format!("lm-{template}")
}

fn template_row(template: TemplateKind) -> String {
    match template {
        TemplateKind::List => "List Template LM".into(),
        TemplateKind::Text => "Text Template LM".into(),
        TemplateKind::Narrative => "Narrative Template LM".into(),
    }
}

const ZERO_SHOT: &str = "Untrained base LM (zero-shot)";
const LOGREG: &str = "Logistic regression";
const MLP: &str = "MLP";

pub type StudyOutput = (ExperimentReport, Manifest, Timings);

/// Fine-tuned LM, untrained base, logistic regression and MLP on one split per seed.
pub fn exp_main(config: &ExperimentConfig, cohort: &Cohort, out: &Path, prior: Option<(&Manifest, PathBuf)>) -> Result<StudyOutput, ExperimentError> {
    let t = config.template;
    let mut st = Study::new(ExperimentKind::Main, config, cohort, out, prior, &[t])?;
    let lm_row = template_row(t);
    for &seed in &config.seeds {
        let split = split_for(cohort, seed)?;
        let train = records(cohort, &split.train_ids);
        let test: Vec<Record> = records(cohort, &split.test_ids).into_iter().cloned().collect();
        let train_owned: Vec<Record> = train.iter().map(|r| (*r).clone()).collect();
        st.record_oracle(seed, &records(cohort, &split.test_ids))?;

        let run = st.prepare(&lm_label(t), seed, &split, &train_owned, t, false)?;
        st.timings.add(&lm_row, run.train_seconds);
        st.rows.trainable.push((lm_row.clone(), run.trainable_bytes().unwrap_or(0)));
        let e = st.lm_eval(&lm_row, &run, &train_owned, &test, t, true)?;
        st.rows.push(&lm_row, seed, e);
        let e = st.lm_eval(ZERO_SHOT, &run, &train_owned, &test, t, false)?;
        st.rows.push(ZERO_SHOT, seed, e);

        let [lr, mlp] = st.baselines([LOGREG, MLP], seed, &train, &test)?;
        st.rows.push(LOGREG, seed, lr);
        st.rows.push(MLP, seed, mlp);
    }
    st.finish(ExperimentKind::Main)
}

/// One fine-tuning run per prompt template; the narrative uses the offline fallback.
pub fn exp_templates(config: &ExperimentConfig, cohort: &Cohort, out: &Path, prior: Option<(&Manifest, PathBuf)>) -> Result<StudyOutput, ExperimentError> {
    let mut st = Study::new(ExperimentKind::Templates, config, cohort, out, prior, &TemplateKind::ALL)?;
    for &seed in &config.seeds {
        let split = split_for(cohort, seed)?;
        let train: Vec<Record> = records(cohort, &split.train_ids).into_iter().cloned().collect();
        let test: Vec<Record> = records(cohort, &split.test_ids).into_iter().cloned().collect();
        st.record_oracle(seed, &records(cohort, &split.test_ids))?;
        for t in TemplateKind::ALL {
            let row = template_row(t);
            let run = st.prepare(&lm_label(t), seed, &split, &train, t, false)?;
            st.timings.add(&row, run.train_seconds);
            st.rows.trainable.push((row.clone(), run.trainable_bytes().unwrap_or(0)));
            let e = st.lm_eval(&row, &run, &train, &test, t, true)?;
            st.rows.push(&row, seed, e);
        }
    }
    st.finish(ExperimentKind::Templates)
}

const LORA_DENSE: &str = "LoRA, f32 base";
const LORA_Q4: &str = "LoRA, 4-bit base";

/// Adapter training on a dense base against the same base stored in 4 bits.
pub fn exp_finetune(config: &ExperimentConfig, cohort: &Cohort, out: &Path, prior: Option<(&Manifest, PathBuf)>) -> Result<StudyOutput, ExperimentError> {
    let t = config.template;
    let mut st = Study::new(ExperimentKind::Finetune, config, cohort, out, prior, &[t])?;
    for &seed in &config.seeds {
        let split = split_for(cohort, seed)?;
        let train: Vec<Record> = records(cohort, &split.train_ids).into_iter().cloned().collect();
        let test: Vec<Record> = records(cohort, &split.test_ids).into_iter().cloned().collect();
        st.record_oracle(seed, &records(cohort, &split.test_ids))?;
        for (row, label, quantized) in [(LORA_DENSE, lm_label(t), false), (LORA_Q4, format!("{}-q4", lm_label(t)), true)] {
            let run = st.prepare(&label, seed, &split, &train, t, quantized)?;
            st.timings.add(row, run.train_seconds);
            st.rows.trainable.push((row.to_string(), run.trainable_bytes().unwrap_or(0)));
            st.rows.base.push((row.to_string(), run.base_bytes));
            let e = st.lm_eval(row, &run, &train, &test, t, true)?;
            st.rows.push(row, seed, e);
        }
    }
    let (mut report, manifest, timings) = st.finish(ExperimentKind::Finetune)?;
    if let (Some(d), Some(q)) = (report.row(LORA_DENSE), report.row(LORA_Q4)) {
        let note = format!(
            "|ACC difference| = {:.4}; base bytes 4-bit / f32 = {:.4}",
            (d.mean.acc - q.mean.acc).abs(),
            q.base_bytes.unwrap_or(0) as f64 / d.base_bytes.unwrap_or(1) as f64
        );
        report.notes.push(note);
    }
    Ok((report, manifest, timings))
}

fn retain_name(method: &str, retain: f64) -> String {
    format!("{method} @ {:.0}%", retain * 100.0)
}

/// Per-ratio mean metrics with a share of features randomly withheld.
pub fn exp_missing(config: &ExperimentConfig, cohort: &Cohort, out: &Path, prior: Option<(&Manifest, PathBuf)>) -> Result<StudyOutput, ExperimentError> {
    let t = config.template;
    let mut st = Study::new(ExperimentKind::Missing, config, cohort, out, prior, &[t])?;
    let schema = &cohort.schema;
    let lm_row = template_row(t);
    let mut ratios = config.retain.clone();
    ratios.sort_by(f64::total_cmp);
    for &seed in &config.seeds {
        let split = split_for(cohort, seed)?;
        let train = records(cohort, &split.train_ids);
        let test = records(cohort, &split.test_ids);
        st.record_oracle(seed, &test)?;
        let mask_seed = sub_seed(seed, "mask");
        let full_train: Vec<Record> = train.iter().map(|r| (*r).clone()).collect();
        let shared = match config.mask_mode {
            MaskMode::Eval => Some(st.prepare(&lm_label(t), seed, &split, &full_train, t, false)?),
            MaskMode::Train => None,
        };
        for &retain in &ratios {
            let eval = masked(&test, schema, retain, mask_seed)?;
            let names = [retain_name(&lm_row, retain), retain_name(LOGREG, retain), retain_name(MLP, retain)];
            for n in &names {
                if !st.rows.retain.iter().any(|(m, _)| m == n) {
                    st.rows.retain.push((n.clone(), retain));
                }
            }
            let (run, fit_train) = match &shared {
                Some(_) => (None, full_train.clone()),
                None => {
                    let tr = masked(&train, schema, retain, mask_seed)?;
                    let label = format!("{}-r{:.0}", lm_label(t), retain * 100.0);
                    (Some(st.prepare(&label, seed, &split, &tr, t, false)?), tr)
                }
            };
            let run_ref = run.as_ref().or(shared.as_ref()).expect("one of the two is set");
            if run.is_some() {
                st.timings.add(&names[0], run_ref.train_seconds);
            } else if retain == ratios[0] {
                st.timings.add(&format!("{lm_row} training"), run_ref.train_seconds);
            }
            st.rows.trainable.push((names[0].clone(), run_ref.trainable_bytes().unwrap_or(0)));
            let e = st.lm_eval(&names[0], run_ref, &fit_train, &eval, t, true)?;
            st.rows.push(&names[0], seed, e);
            let fit_refs: Vec<&Record> = fit_train.iter().collect();
            let [lr, mlp] = st.baselines([&names[1], &names[2]], seed, &fit_refs, &eval)?;
            st.rows.push(&names[1], seed, lr);
            st.rows.push(&names[2], seed, mlp);
        }
    }
    let (mut report, manifest, timings) = st.finish(ExperimentKind::Missing)?;
    let lm_means: Vec<String> = ratios
        .iter()
        .filter_map(|&r| report.row(&retain_name(&lm_row, r)).map(|row| format!("{:.4}", row.mean.auc)))
        .collect();
    report.notes.push(format!("LM mean AUC by retain ratio: {}", lm_means.join(" ")));
    report.notes.push(format!("mask mode: {:?}", config.mask_mode).to_lowercase());
    Ok((report, manifest, timings))
}

pub fn run_experiment(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    out: &Path,
    prior: Option<(&Manifest, PathBuf)>,
) -> Result<StudyOutput, ExperimentError> {
    std::fs::create_dir_all(out).map_err(|e| ExperimentError::io(out, e))?;
    let cohort = super::load_cohort_source(&config.cohort)?;
    let result = match kind {
        ExperimentKind::Main => exp_main(config, &cohort, out, prior)?,
        ExperimentKind::Templates => exp_templates(config, &cohort, out, prior)?,
        ExperimentKind::Finetune => exp_finetune(config, &cohort, out, prior)?,
        ExperimentKind::Missing => exp_missing(config, &cohort, out, prior)?,
    };
    write_outputs(out, &result)?;
    Ok(result)
}

/// Re-runs the experiment recorded in `manifest_path`, reusing checkpoints that
/// still match their recorded hashes.
pub fn rerun_from_manifest(manifest_path: &Path, out: &Path) -> Result<StudyOutput, ExperimentError> {
    let manifest = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let result = run_experiment(manifest.experiment, &manifest.config, out, Some((&manifest, dir)))?;
    if result.1.runs != manifest.runs {
        log::warn!("re-run artifacts differ from the manifest");
    }
    Ok(result)
}

fn slug(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

/// report.txt, report.json, timings.txt, manifest.json and one ROC file per row.
pub fn write_outputs(out: &Path, (report, manifest, timings): &StudyOutput) -> Result<(), ExperimentError> {
    let write = |name: &str, body: &str| {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| ExperimentError::io(&p, e))
    };
    write("report.txt", &report.to_text())?;
    write("report.json", &report.to_json())?;
    write("timings.txt", &timings.to_text())?;
    write("manifest.json", &manifest.to_json())?;
    let roc_dir = out.join("roc");
    std::fs::create_dir_all(&roc_dir).map_err(|e| ExperimentError::io(&roc_dir, e))?;
    for row in &report.rows {
        if let Some(roc) = &row.roc {
            let p = roc_dir.join(format!("{}.csv", slug(&row.name)));
            std::fs::write(&p, roc.to_csv_string()).map_err(|e| ExperimentError::io(&p, e))?;
        }
    }
    Ok(())
}
