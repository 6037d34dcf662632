//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.
//! Runs without the libtest harness so the lines are never captured.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabdx_core::cohort::{synth_cohort, Label, Record, Schema, SynthConfig, Value};
use tabdx_core::experiments::{
    memorization_run, run_experiment, CohortSource, ExperimentConfig, ExperimentKind, ModelShape,
};
use tabdx_core::lm::{
    forward, lora_inject, lora_merge, lora_param_count, loss_and_grad, Example, LoraConfig, LoraTarget, ModelConfig, ModelParams,
    TrainConfig,
};
use tabdx_core::metrics::{auc_oracle, bootstrap_ci, confusion, roc_auc, summarize, ConfusionCounts, ScoredSet};
use tabdx_core::promptgen::{build_sft, render_list, render_text, NarrativeMode, TemplateKind};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() <= limit_secs as f64, format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64()))
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.cohort = CohortSource::Synthetic { preset: "strong-signal".into(), n: Some(400), seed: 7 };
    c.seeds = vec![1];
    c.model = ModelShape { layers: 1, heads: 2, embed_dim: 16, mlp_dim: 32 };
    c.train.epochs = 1;
    c.bootstrap_resamples = 200;
    c
}

/// Real-cohort numbers need gated data and large models; the report layout is what carries over.
fn c1_structure() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (main, _, _) = run_experiment(ExperimentKind::Main, &tiny_config(), &tmp.path().join("main"), None).map_err(|e| e.to_string())?;
    let (ft, _, timings) =
        run_experiment(ExperimentKind::Finetune, &tiny_config(), &tmp.path().join("ft"), None).map_err(|e| e.to_string())?;
    let text = main.to_text();
    for col in ["ACC", "F1", "AUC (95% CI)", "SPE", "SEN", "PPV", "NPV", "Trainable bytes"] {
        check(text.contains(col), format!("main report lacks column {col}"))?;
    }
    check(main.rows.len() == 4, "main report needs 4 rows")?;
    check(ft.rows.iter().all(|r| r.base_bytes.is_some()), "finetune rows need base bytes")?;
    check(timings.rows.len() == 2, "finetune rows need wall times")?;
    Ok("report layout matches; real-cohort values are not targets".into())
}

fn c2_prompt_fidelity() -> Outcome {
    const WORKED: &str = "Age is 60, sex is female, body mass index (BMI) is 24.5018 kg/m², sometimes sleeplessness, sleep time is 6 hours, drink alcohol three times a week, never self-harmed, the employment status is in paid employment, the income is 45000 pound, work 38 hours per week, the education is o levels, not has long-standing illness, the hdl cholesterol is 2.075 mmol/l, the clinical ldl cholesterol is 2.6077 mmol/l, the triglycerides is 1.334 mmol/l, the total cholesterol is 4.7848 mmol/l";
    const PANEL_TEXT: &str = "Age is 47,sex is male, body mass index (bmi) is 29.7973 kg/m², sometimes sleeplessness, sleep time is 9 hours, drink alcohol three or four times a week, never self-harmed, the employment status is in paid employment or self-employed, the income is less than 18,000 dollar, work 17 hours per week, the education is a levels/as levels or equivalent, not has long-standing illness, the hdl cholesterol is 1.507 mmol/l, the clinical ldl cholesterol is 2.3299 mmol/l, the triglycerides is 1.038 mmol/l, the total cholesterol is 4.7086 mmol/l.";
    const PANEL_LIST: &str = "Age: 47, Sex: male, Sleepless: sometime, Sleep Times: 9 hours, Dring: 4 / week, Self-harmed: never, Employment: paid, Work Times: 17 h / week, Education: A level, Income: 18,000, HDLC: 1.507, CLDLC: 2.3299, TG: 1.038, TC: 4.7086.";
    let started = Instant::now();
    let ukb = Schema::ukb16();
    let fill = |r: Record, cells: &[(&str, &str)]| {
        cells.iter().fold(r, |r, (f, v)| {
            let numeric = ukb.feature(f).is_some_and(|s| s.is_numeric());
            r.with(f, if numeric { Value::lit(v) } else { Value::cat(v) })
        })
    };
    let worked = fill(
        Record::new("T2", Label::Mdd),
        &[
            ("age", "60"), ("sex", "female"), ("bmi", "24.5018"), ("sleeplessness", "sometimes"), ("sleep_duration", "6"),
            ("alcohol", "3/week"), ("self_harm", "never"), ("employment", "paid"), ("income", "45000"), ("work_hours", "38"),
            ("education", "o_level"), ("longstanding_illness", "no"), ("hdl", "2.075"), ("ldl", "2.6077"),
            ("triglycerides", "1.334"), ("total_cholesterol", "4.7848"),
        ],
    );
    let panel = fill(
        Record::new("F3", Label::Hc),
        &[
            ("age", "47"), ("sex", "male"), ("sleeplessness", "sometimes"), ("sleep_duration", "9"), ("alcohol", "4/week"),
            ("self_harm", "never"), ("employment", "paid"), ("work_hours", "17"), ("education", "a_level"), ("income", "18,000"),
            ("hdl", "1.507"), ("ldl", "2.3299"), ("triglycerides", "1.038"), ("total_cholesterol", "4.7086"),
        ],
    );
    let fig = Schema::builtin("figure3").map_err(|e| e.to_string())?;
    check(render_text(&worked, &ukb).text == WORKED, "worked example text differs")?;
    let sft = build_sft(&worked, &ukb, TemplateKind::Text, &NarrativeMode::Fallback).map_err(|e| e.to_string())?;
    check(sft.output == "Yes" && sft.input == WORKED, "worked example triple differs")?;
    check(render_list(&panel, &fig).text == PANEL_LIST, "list panel differs")?;
    let full = panel.with("bmi", Value::lit("29.7973")).with("longstanding_illness", Value::cat("no"));
    check(render_text(&full, &fig).text == PANEL_TEXT, "text panel differs")?;
    within(started.elapsed(), 1)?;
    Ok("3 strings byte-exact".into())
}

fn c3_gradients() -> Outcome {
    let started = Instant::now();
    let cfg = ModelConfig { layers: 2, heads: 2, embed_dim: 16, mlp_dim: 32, context_len: 16, vocab_size: 40 };
    let mut p = ModelParams::<f64>::init(cfg, 5).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for s in p.slices_mut() {
        s.iter_mut().for_each(|v| *v += rng.random_range(-0.4..0.4));
    }
    let ex = Example { ids: vec![1, 7, 22, 3, 39, 11, 8], targets: vec![None, None, None, Some(3), Some(39), None, Some(5)] };
    let (_, g) = loss_and_grad(&p, None, &ex).map_err(|e| e.to_string())?;
    let named = g.named();
    let kinds = named.len();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut covered = std::collections::BTreeSet::new();
    for c in 0..200 {
        let t = c % kinds;
        let i = rng.random_range(0..named[t].1.len());
        let loss_at = |d: f64| {
            let mut q = p.clone();
            q.slices_mut()[t][i] += d;
            loss_and_grad(&q, None, &ex).map(|(l, _)| l)
        };
        let num = (loss_at(h).map_err(|e| e.to_string())? - loss_at(-h).map_err(|e| e.to_string())?) / (2.0 * h);
        let ana = named[t].1[i];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-6));
        covered.insert(t);
    }
    check(covered.len() == kinds, "not every tensor was sampled")?;
    check(worst < 1e-4, format!("max relative error {worst:.3e}"))?;
    within(started.elapsed(), 60)?;
    Ok(format!("200 coordinates over {kinds} tensors, max relative error {worst:.2e}"))
}

fn c4_lora() -> Outcome {
    let started = Instant::now();
    let cfg = ModelConfig { layers: 2, heads: 2, embed_dim: 16, mlp_dim: 32, context_len: 16, vocab_size: 40 };
    let base = ModelParams::<f32>::init(cfg, 3).map_err(|e| e.to_string())?;
    let ids = [1u32, 9, 4, 33, 12, 7];
    let lc = LoraConfig { rank: 4, alpha: 8.0, targets: LoraTarget::ALL.to_vec(), ..LoraConfig::default() };
    let mut adapter = lora_inject(&base, &lc).map_err(|e| e.to_string())?;
    let plain = forward(&base, None, &ids).map_err(|e| e.to_string())?;
    let adapted = forward(&base, Some(&adapter), &ids).map_err(|e| e.to_string())?;
    check(plain == adapted, "adapter at init changes logits")?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for s in adapter.slices_mut() {
        s.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    let runtime = forward(&base, Some(&adapter), &ids).map_err(|e| e.to_string())?;
    let merged = forward(&lora_merge(&base, &adapter).map_err(|e| e.to_string())?, None, &ids).map_err(|e| e.to_string())?;
    let gap = runtime.iter().zip(merged.iter()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    check(gap <= 1e-6, format!("merged vs runtime gap {gap:e}"))?;

    let cases = [
        (ModelConfig { layers: 2, heads: 2, embed_dim: 16, mlp_dim: 32, context_len: 16, vocab_size: 40 }, 4, vec![LoraTarget::Q, LoraTarget::V]),
        (ModelConfig { layers: 3, heads: 4, embed_dim: 32, mlp_dim: 96, context_len: 16, vocab_size: 50 }, 8, LoraTarget::ALL.to_vec()),
        (ModelConfig { layers: 1, heads: 1, embed_dim: 8, mlp_dim: 20, context_len: 8, vocab_size: 30 }, 2, vec![LoraTarget::Up, LoraTarget::Down]),
    ];
    for (mc, rank, targets) in cases {
        let lc = LoraConfig { rank, targets: targets.clone(), ..LoraConfig::default() };
        let expected: usize = targets
            .iter()
            .map(|t| {
                let (din, dout) = match t {
                    LoraTarget::Up => (mc.embed_dim, mc.mlp_dim),
                    LoraTarget::Down => (mc.mlp_dim, mc.embed_dim),
                    _ => (mc.embed_dim, mc.embed_dim),
                };
                mc.layers * rank * (din + dout)
            })
            .sum();
        let counted = lora_param_count(&mc, &lc);
        check(counted == expected, format!("count {counted} vs formula {expected}"))?;
        let p = ModelParams::<f32>::init(mc, 1).map_err(|e| e.to_string())?;
        check(lora_inject(&p, &lc).map_err(|e| e.to_string())?.num_params() == expected, "adapter size differs from formula")?;
    }
    within(started.elapsed(), 30)?;
    Ok(format!("exact identity at init, merge gap {gap:.1e}, 3 count configs"))
}

fn c5_auc_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..=500);
        let levels = rng.random_range(2..=50u32);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=levels) as f64 / levels as f64).collect();
        let set = ScoredSet::unnamed(scores, labels).map_err(|e| e.to_string())?;
        let (_, trap) = roc_auc(&set).map_err(|e| e.to_string())?;
        let pair = auc_oracle(&set).map_err(|e| e.to_string())?;
        worst = worst.max((trap - pair).abs());
    }
    check(worst <= 1e-9, format!("max |diff| {worst:e}"))?;
    within(started.elapsed(), 30)?;
    Ok(format!("200 tied sets, max |diff| {worst:.1e}"))
}

fn c6_metric_cases() -> Outcome {
    let started = Instant::now();
    let set = ScoredSet::unnamed(vec![0.9, 0.4, 0.6, 0.3], vec![true, true, false, false]).map_err(|e| e.to_string())?;
    let c = confusion(&set, 0.5).map_err(|e| e.to_string())?;
    check(c == ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 }, format!("hand count differs: {c:?}"))?;
    let s = summarize(&c);
    check([s.acc, s.f1, s.spe, s.sens, s.ppv, s.npv] == [0.5; 6], "tp=fp=tn=fn=1 must give 0.5 everywhere")?;
    let s = summarize(&ConfusionCounts { tp: 25, fp: 25, tn: 25, fn_: 25 });
    check([s.acc, s.f1, s.spe, s.sens, s.ppv, s.npv] == [0.5; 6], "symmetric counts must give 0.5")?;
    let s = summarize(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 2 });
    check(s.ppv == 0.0 && s.degenerate.iter().any(|d| d == "ppv"), "ppv with zero denominator must be a flagged zero")?;
    let s = summarize(&ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 });
    check(s.acc == 0.0 && s.degenerate.len() >= 5, "empty counts must be flagged zeros")?;

    let tie = ScoredSet::unnamed(vec![0.5, 0.5, 0.8], vec![false, true, true]).map_err(|e| e.to_string())?;
    check(roc_auc(&tie).map_err(|e| e.to_string())?.1 == 0.75, "tie example must give 0.75")?;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels: Vec<bool> = (0..300).map(|i| i % 3 == 0).collect();
    let scores: Vec<f64> = labels.iter().map(|&l| (rng.random_range(0.0..0.7) + if l { 0.3 } else { 0.0 }) as f64).collect();
    let set = ScoredSet::unnamed(scores, labels).map_err(|e| e.to_string())?;
    let point = roc_auc(&set).map_err(|e| e.to_string())?.1;
    let stat = |s: &ScoredSet| Ok(roc_auc(s)?.1);
    let a = bootstrap_ci(&set, stat, 1000, 0.95, 3).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(&set, stat, 1000, 0.95, 3).map_err(|e| e.to_string())?;
    check(a == b, "bootstrap differs under one seed")?;
    check(a.lo <= point && point <= a.hi, format!("point {point} outside [{}, {}]", a.lo, a.hi))?;
    within(started.elapsed(), 30)?;
    Ok(format!("hand cases exact; CI [{:.4}, {:.4}] holds {point:.4}", a.lo, a.hi))
}

fn c7_learning_signal() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![1];
    check(
        matches!(&cfg.cohort, CohortSource::Synthetic { preset, n: None, .. } if preset == "strong-signal"),
        "default cohort is not the strong-signal preset",
    )?;
    let (report, _, _) = run_experiment(ExperimentKind::Main, &cfg, tmp.path(), None).map_err(|e| e.to_string())?;
    let oracle = report.oracle_auc.first().map(|(_, a)| *a).ok_or("no oracle AUC")?;
    let auc = |name: &str| report.row(name).map(|r| r.mean.auc).ok_or(format!("missing row {name}"));
    let (lm, lr, zero) = (auc("Text Template LM")?, auc("Logistic regression")?, auc("Untrained base LM (zero-shot)")?);
    let n = report.rows[0].evals[0].n;
    let summary = format!("n_test {n}, oracle {oracle:.4}, LM {lm:.4}, logreg {lr:.4}, untrained {zero:.4}, {:.0}s", started.elapsed().as_secs_f64());
    check(n == 1000, format!("expected a 1000-record test split of 5000: {summary}"))?;
    check(lm >= oracle - 0.10, format!("LM below oracle - 0.10: {summary}"))?;
    check(lr >= oracle - 0.03, format!("logreg below oracle - 0.03: {summary}"))?;
    check((0.4..=0.6).contains(&zero), format!("untrained base outside [0.4, 0.6]: {summary}"))?;
    within(started.elapsed(), 15 * 60)?;
    Ok(summary)
}

fn c8_quantized_memorization() -> Outcome {
    let started = Instant::now();
    let cfg = SynthConfig::preset("strong-signal").map_err(|e| e.to_string())?;
    let cohort = synth_cohort(&cfg, 7).map_err(|e| e.to_string())?.cohort;
    let record = build_sft(&cohort.records[0], &cohort.schema, TemplateKind::Text, &NarrativeMode::Fallback).map_err(|e| e.to_string())?;
    let tc = TrainConfig { peak_lr: 1e-2, batch_size: 1, epochs: 200, weight_decay: 0.0, ..TrainConfig::default() };
    let lc = LoraConfig { rank: 4, alpha: 8.0, targets: vec![LoraTarget::Q, LoraTarget::V, LoraTarget::Head], ..LoraConfig::default() };
    let dense = memorization_run(&record, ModelShape::default(), &tc, &lc, 3, false).map_err(|e| e.to_string())?;
    let q4 = memorization_run(&record, ModelShape::default(), &tc, &lc, 3, true).map_err(|e| e.to_string())?;
    let ratio = q4.base_bytes as f64 / dense.base_bytes as f64;
    let summary = format!(
        "final loss f32 {:.3e} ({:.1}s), 4-bit {:.3e} ({:.1}s), memory ratio {ratio:.3}",
        dense.final_loss, dense.wall_seconds, q4.final_loss, q4.wall_seconds
    );
    check((dense.final_loss - q4.final_loss).abs() <= 0.1, format!("losses differ by more than 0.1: {summary}"))?;
    check(ratio <= 0.3, format!("quantized base too large: {summary}"))?;
    check(dense.wall_seconds > 0.0 && q4.wall_seconds > 0.0, "wall time missing")?;
    within(started.elapsed(), 5 * 60)?;
    Ok(summary)
}

fn c9_missingness() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig::default();
    check(cfg.seeds.len() == 3, "default config must carry 3 seeds")?;
    check(cfg.retain == [0.2, 0.4, 0.6, 0.8, 1.0], "default retain ratios differ")?;
    let (report, _, _) = run_experiment(ExperimentKind::Missing, &cfg, tmp.path(), None).map_err(|e| e.to_string())?;
    let means: Vec<f64> = cfg
        .retain
        .iter()
        .map(|r| report.row(&format!("Text Template LM @ {:.0}%", r * 100.0)).map(|row| row.mean.auc))
        .collect::<Option<_>>()
        .ok_or("missing LM rows")?;
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.4}")).collect();
    let summary = format!("LM mean AUC by retain: {}, {:.0}s", shown.join(" "), started.elapsed().as_secs_f64());
    for w in means.windows(2) {
        check(w[1] >= w[0] - 0.02, format!("drop beyond 0.02 slack: {summary}"))?;
    }
    within(started.elapsed(), 20 * 60)?;
    Ok(summary)
}

fn tabdx(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tabdx")).args(args).current_dir(cwd).output().map_err(|e| e.to_string())?;
    check(out.status.success(), format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
}

fn c10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let base = ["--threads", "1", "experiment"];
    let first: Vec<&str> = base
        .iter()
        .copied()
        .chain(["missing", "--preset", "strong-signal", "--n", "400", "--epochs", "1", "--seeds", "1,2", "--out", "first"])
        .collect();
    tabdx(&first, dir)?;
    tabdx(&[&base[..], &["--manifest", "first/manifest.json", "--out", "second"]].concat(), dir)?;
    // A fresh directory without checkpoints forces every adapter to be retrained.
    std::fs::create_dir_all(dir.join("bare")).map_err(|e| e.to_string())?;
    std::fs::copy(dir.join("first/manifest.json"), dir.join("bare/manifest.json")).map_err(|e| e.to_string())?;
    tabdx(&[&base[..], &["--manifest", "bare/manifest.json", "--out", "third"]].concat(), dir)?;
    for name in ["report.txt", "report.json", "manifest.json"] {
        let a = std::fs::read(dir.join("first").join(name)).map_err(|e| e.to_string())?;
        for other in ["second", "third"] {
            let b = std::fs::read(dir.join(other).join(name)).map_err(|e| e.to_string())?;
            check(a == b, format!("{other}/{name} differs from the original run"))?;
        }
    }
    Ok("cached and retrained re-runs reproduce report.txt, report.json and manifest.json byte-exactly".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 report structure", c1_structure),
        ("2 prompt fidelity", c2_prompt_fidelity),
        ("3 gradient fidelity", c3_gradients),
        ("4 LoRA invariants", c4_lora),
        ("5 AUC oracle equivalence", c5_auc_oracle),
        ("6 metric hand cases", c6_metric_cases),
        ("7 end-to-end learning signal", c7_learning_signal),
        ("8 quantized-base memorization", c8_quantized_memorization),
        ("9 missingness trend", c9_missingness),
        ("10 manifest determinism", c10_determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(&format!("{o} "))) {
            continue;
        }
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
