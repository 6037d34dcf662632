use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use tabdx_core::backends::{classify_many, Backend, RemoteClient, RemoteConfig};
use tabdx_core::baselines::Featurizer;
use tabdx_core::cohort::{baseline_table, make_splits, read_cohort, synth_cohort, Cohort, CsvOptions, Record, Schema, SynthConfig};
use tabdx_core::experiments::{
    load_cohort_source, load_model, rerun_from_manifest, run_experiment, sub_seed, train_model, CohortSource, ExperimentConfig,
    ExperimentKind, ExperimentReport, MaskMode, StudyOutput,
};
use tabdx_core::metrics::{auc_oracle, evaluate, roc_auc, youden_threshold, MetricReport, ScoredSet};
use tabdx_core::promptgen::{build_sft, mask_features, write_corpus, NarrativeMode, TemplateKind};

use crate::{CohortArgs, Command, RemoteArgs, TrainArgs};

pub const DEFAULT_SEED: u64 = 7;

pub enum Failure {
    /// Bad flags or values; nothing has been written.
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type Res<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

fn parse_template(s: &str) -> Res<TemplateKind> {
    s.parse().or_else(|_| usage(format!("unknown template {s:?} (list, text, narrative)")))
}

#[derive(Clone, Copy)]
enum SplitSel {
    Train,
    Test,
    All,
}

fn parse_split(s: &str) -> Res<SplitSel> {
    match s {
        "train" => Ok(SplitSel::Train),
        "test" => Ok(SplitSel::Test),
        "all" => Ok(SplitSel::All),
        _ => usage(format!("unknown split {s:?} (train, test, all)")),
    }
}

fn check_retain(r: Option<f64>) -> Res<()> {
    match r {
        Some(r) if !(r > 0.0 && r <= 1.0) => usage(format!("--retain must be in (0, 1], got {r}")),
        _ => Ok(()),
    }
}

fn cohort_source(args: &CohortArgs, fallback: &CohortSource) -> CohortSource {
    if let Some(path) = &args.cohort {
        return CohortSource::File { path: path.display().to_string(), schema: args.schema.clone() };
    }
    let (preset, n, seed) = match fallback {
        CohortSource::Synthetic { preset, n, seed } => (preset.clone(), *n, *seed),
        CohortSource::File { .. } if args.preset.is_none() && args.n.is_none() => return fallback.clone(),
        CohortSource::File { .. } => ("strong-signal".to_string(), None, DEFAULT_SEED),
    };
    CohortSource::Synthetic {
        preset: args.preset.clone().unwrap_or(preset),
        n: args.n.or(n),
        seed: args.cohort_seed.unwrap_or(seed),
    }
}

/// Built-in defaults, then the config file, then flags.
fn build_config(train: &TrainArgs, cohort: &CohortArgs, seed: Option<u64>) -> Res<ExperimentConfig> {
    let mut cfg = match &train.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    cfg.cohort = cohort_source(cohort, &cfg.cohort);
    if let Some(t) = &train.template {
        cfg.template = parse_template(t)?;
    }
    if let Some(e) = train.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = train.lr {
        cfg.train.peak_lr = lr;
    }
    if let Some(b) = train.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(r) = train.rank {
        cfg.lora.rank = r;
    }
    if let Some(s) = &train.seeds {
        cfg.seeds = s.clone();
    } else if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// The cohort named by the flags, or `recorded` when no --cohort or --preset is
/// given. Synthetic cohorts keep their own seed (--cohort-seed), not the run seed.
fn load_cohort_args(args: &CohortArgs, recorded: Option<&CohortSource>) -> Res<Cohort> {
    let default = CohortSource::Synthetic { preset: "strong-signal".into(), n: None, seed: DEFAULT_SEED };
    let source = match recorded {
        Some(r) if args.cohort.is_none() && args.preset.is_none() => cohort_source(args, r),
        _ if args.cohort.is_none() && args.preset.is_none() => return usage("give --cohort <csv> or --preset <name>"),
        _ => cohort_source(args, &default),
    };
    Ok(load_cohort_source(&source)?)
}

fn select<'a>(cohort: &'a Cohort, split: SplitSel, seed: u64) -> Res<Vec<&'a Record>> {
    let ids = match split {
        SplitSel::All => return Ok(cohort.records.iter().collect()),
        SplitSel::Train => make_splits(cohort, sub_seed(seed, "split"))?.train_ids,
        SplitSel::Test => make_splits(cohort, sub_seed(seed, "split"))?.test_ids,
    };
    Ok(ids.iter().filter_map(|id| cohort.get(id)).collect())
}

fn prepare_records(records: &[&Record], schema: &Schema, retain: Option<f64>, seed: u64) -> Res<Vec<Record>> {
    match retain {
        Some(r) => Ok(records
            .iter()
            .map(|rec| mask_features(rec, schema, r, sub_seed(seed, "mask")))
            .collect::<Result<_, _>>()?),
        None => Ok(records.iter().map(|r| (*r).clone()).collect()),
    }
}

fn remote_client(args: &RemoteArgs, cache_dir: PathBuf) -> Res<Option<RemoteClient>> {
    let Some(endpoint) = &args.remote_endpoint else { return Ok(None) };
    let Some(model) = &args.remote_model else { return usage("--remote-endpoint needs --remote-model") };
    let mut cfg = RemoteConfig::new(endpoint.clone(), model.clone());
    if let Some(env) = &args.api_key_env {
        cfg.api_key_env = env.clone();
    }
    cfg.cache_dir = Some(cache_dir);
    Ok(Some(RemoteClient::http(cfg)?))
}

fn ensure_parent(path: &Path) -> Res<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write(path: &Path, body: &str) -> Res<()> {
    ensure_parent(path)?;
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_study((report, _, timings): &StudyOutput) {
    print!("{}", report.to_text());
    println!();
    print!("{}", timings.to_text());
}

pub fn run(command: Command, seed: Option<u64>) -> Res<()> {
    match command {
        Command::Synth { preset, n, out } => {
            let mut cfg = SynthConfig::resolve(&preset).map_err(|e| Failure::Usage(e.to_string()))?;
            if let Some(n) = n {
                cfg.n = n;
            }
            let synth = synth_cohort(&cfg, seed.unwrap_or(DEFAULT_SEED))?;
            let c = &synth.cohort;
            ensure_parent(&out)?;
            c.save(&out)?;
            let scores: Vec<f64> = c.records.iter().filter_map(|r| c.oracle_for(&r.patient_id)).collect();
            let labels: Vec<bool> = c.records.iter().map(|r| r.label.as_bit() == Some(1)).collect();
            let positives = labels.iter().filter(|&&l| l).count();
            println!("{} records, {} positive, written to {}", c.len(), positives, out.display());
            if let Ok(set) = ScoredSet::unnamed(scores, labels) {
                println!("oracle AUC: {:.4}", auc_oracle(&set)?);
            }
            Ok(())
        }
        Command::Ingest { input, schema, id_column, label_column, out } => {
            let schema = Schema::resolve(&schema).map_err(|e| Failure::Usage(e.to_string()))?;
            let file = fs::File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let cohort = read_cohort(file, &schema, &CsvOptions { id_column, label_column })?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            cohort.save(&out.join("cohort.csv"))?;
            write(&out.join("baseline.csv"), &baseline_table(&cohort)?.to_csv_string())?;
            println!("{} records, cohort hash {}", cohort.len(), cohort.content_hash());
            Ok(())
        }
        Command::Corpus { cohort, template, split, retain, remote, out } => {
            let template = parse_template(&template)?;
            let split = parse_split(&split)?;
            check_retain(retain)?;
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let c = load_cohort_args(&cohort, None)?;
            let recs = prepare_records(&select(&c, split, seed)?, &c.schema, retain, seed)?;
            let cache = out.with_extension("cache");
            let client = remote_client(&remote, cache.clone())?;
            let mode = match &client {
                Some(chat) => NarrativeMode::Remote { chat, cache_dir: &cache },
                None => NarrativeMode::Fallback,
            };
            let corpus = recs.iter().map(|r| build_sft(r, &c.schema, template, &mode)).collect::<Result<Vec<_>, _>>()?;
            ensure_parent(&out)?;
            write_corpus(&corpus, &out)?;
            println!("{} records written to {}", corpus.len(), out.display());
            Ok(())
        }
        Command::Train { cohort, train, quantized, out } => {
            let cfg = build_config(&train, &cohort, seed)?;
            let c = load_cohort_source(&cfg.cohort)?;
            let (card, run) = train_model(&cfg, &c, &out, quantized)?;
            println!(
                "trained {} on seed {}: final loss {}, adapter {} bytes, {:.1}s",
                card.label,
                card.seed,
                card.final_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
                run.trainable_bytes().unwrap_or(0),
                run.train_seconds
            );
            Ok(())
        }
        Command::Classify { model, cohort, split, retain, template, no_adapter, remote, out } => {
            let split = parse_split(&split)?;
            let template = parse_template(&template)?;
            check_retain(retain)?;
            let (backend, template, seed, recorded): (Box<dyn Backend>, TemplateKind, u64, _) = match &model {
                Some(dir) if remote.remote_endpoint.is_none() => {
                    let (card, b) = load_model(dir, !no_adapter)?;
                    (Box::new(b), card.template, seed.unwrap_or(card.seed), Some(card.cohort))
                }
                _ => {
                    let cache = out.with_extension("cache");
                    let client = remote_client(&remote, cache)?.ok_or_else(|| Failure::Usage("give --model or --remote-endpoint".into()))?;
                    (Box::new(client), template, seed.unwrap_or(DEFAULT_SEED), None)
                }
            };
            let c = load_cohort_args(&cohort, recorded.as_ref())?;
            let recs = prepare_records(&select(&c, split, seed)?, &c.schema, retain, seed)?;
            let prompts = recs
                .iter()
                .map(|r| build_sft(r, &c.schema, template, &NarrativeMode::Fallback).map(|s| s.prompt()))
                .collect::<Result<Vec<_>, _>>()?;
            let scores = classify_many(backend.as_ref(), &prompts)?;
            let mut body = String::from("patient_id,score,label\n");
            for (r, s) in recs.iter().zip(&scores) {
                let label = r.label.as_bit().map(|b| b.to_string()).unwrap_or_default();
                body.push_str(&format!("{},{},{}\n", r.patient_id, s.p_yes, label));
            }
            write(&out, &body)?;
            println!("{} scores written to {}", scores.len(), out.display());
            Ok(())
        }
        Command::Eval { scores, threshold, bootstrap, out } => {
            let fixed = match threshold.as_str() {
                "youden" => None,
                t => match t.parse::<f64>() {
                    Ok(v) if (0.0..=1.0).contains(&v) => Some(v),
                    _ => return usage(format!("--threshold must be a number in [0,1] or \"youden\", got {t:?}")),
                },
            };
            let set = ScoredSet::read_csv(&scores)?;
            let thr = match fixed {
                Some(v) => v,
                None => youden_threshold(&set)?,
            };
            let report = evaluate(&set, thr, bootstrap, seed.unwrap_or(DEFAULT_SEED))?;
            let (roc, _) = roc_auc(&set)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("report.txt"), &report.to_text())?;
            write(&out.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
            write(&out.join("roc.csv"), &roc.to_csv_string())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Experiment { kind, manifest, cohort, train, mask_mode, out } => {
            if let Some(path) = manifest {
                let result = rerun_from_manifest(&path, &out)?;
                print_study(&result);
                return Ok(());
            }
            let kind: ExperimentKind = match kind.as_deref().unwrap_or_default().parse() {
                Ok(k) => k,
                Err(e) => return usage(e.to_string()),
            };
            let mut cfg = build_config(&train, &cohort, seed)?;
            match mask_mode.as_deref() {
                None => {}
                Some("eval") => cfg.mask_mode = MaskMode::Eval,
                Some("train") => cfg.mask_mode = MaskMode::Train,
                Some(m) => return usage(format!("unknown mask mode {m:?} (eval, train)")),
            }
            let result = run_experiment(kind, &cfg, &out, None)?;
            print_study(&result);
            Ok(())
        }
        Command::ExportFeatures { cohort, split, out } => {
            let split = parse_split(&split)?;
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let c = load_cohort_args(&cohort, None)?;
            let train = select(&c, SplitSel::Train, seed)?;
            let feat = Featurizer::fit_records(&c.schema, &train)?;
            let recs = select(&c, split, seed)?;
            write(&out, &feat.export_csv(recs.iter().copied())?)?;
            println!("{} rows x {} columns written to {}", recs.len(), feat.dim(), out.display());
            Ok(())
        }
        Command::Report { input, out } => {
            let src = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let text = match ExperimentReport::from_json(&src) {
                Ok(r) => r.to_text(),
                Err(_) => serde_json::from_str::<MetricReport>(&src)
                    .map_err(|_| anyhow!("{} is neither an experiment nor a metric report", input.display()))?
                    .to_text(),
            };
            match out {
                Some(p) => write(&p, &text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}
