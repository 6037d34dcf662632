use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, confusion, roc_auc, summarize, BootstrapCi, ConfusionCounts, MetricError, ScoredSet};

/// Column order used in every table.
pub const METRIC_NAMES: [&str; 7] = ["ACC", "F1", "AUC", "SPE", "SEN", "PPV", "NPV"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub acc: f64,
    pub f1: f64,
    pub auc: f64,
    pub spe: f64,
    pub sens: f64,
    pub ppv: f64,
    pub npv: f64,
}

impl MetricValues {
    pub fn to_array(&self) -> [f64; 7] {
        [self.acc, self.f1, self.auc, self.spe, self.sens, self.ppv, self.npv]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self { acc: a[0], f1: a[1], auc: a[2], spe: a[3], sens: a[4], ppv: a[5], npv: a[6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub values: MetricValues,
    pub auc_ci: BootstrapCi,
    pub threshold: f64,
    pub n: usize,
    pub n_pos: usize,
    pub counts: ConfusionCounts,
    pub degenerate: Vec<String>,
}

/// Confusion metrics at `threshold`, AUC, and a percentile bootstrap CI on AUC.
pub fn evaluate(set: &ScoredSet, threshold: f64, n_resamples: usize, seed: u64) -> Result<MetricReport, MetricError> {
    let counts = confusion(set, threshold)?;
    let s = summarize(&counts);
    let (_, auc) = roc_auc(set)?;
    let auc_ci = bootstrap_ci(set, |r| Ok(roc_auc(r)?.1), n_resamples, 0.95, seed)?;
    Ok(MetricReport {
        values: MetricValues { acc: s.acc, f1: s.f1, auc, spe: s.spe, sens: s.sens, ppv: s.ppv, npv: s.npv },
        auc_ci,
        threshold,
        n: set.len(),
        n_pos: set.n_pos(),
        counts,
        degenerate: s.degenerate,
    })
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

impl MetricReport {
    pub fn auc_with_ci(&self) -> String {
        format!("{} ({:.0}% CI: {} - {})", f4(self.values.auc), self.auc_ci.level * 100.0, f4(self.auc_ci.lo), f4(self.auc_ci.hi))
    }

    /// Aligned key/value text with four decimals.
    pub fn to_text(&self) -> String {
        let v = self.values.to_array();
        let mut rows: Vec<(String, String)> = vec![
            ("n".into(), self.n.to_string()),
            ("positives".into(), self.n_pos.to_string()),
            ("threshold".into(), f4(self.threshold)),
        ];
        for (name, val) in METRIC_NAMES.iter().zip(v) {
            let shown = if *name == "AUC" { self.auc_with_ci() } else { f4(val) };
            rows.push((name.to_string(), shown));
        }
        rows.push((
            "confusion".into(),
            format!("tp={} fp={} tn={} fn={}", self.counts.tp, self.counts.fp, self.counts.tn, self.counts.fn_),
        ));
        rows.push((
            "degenerate".into(),
            if self.degenerate.is_empty() { "none".into() } else { self.degenerate.join(",") },
        ));
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<w$}  {v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalSummary {
    pub folds: Vec<MetricReport>,
    pub mean: MetricValues,
    /// Sample standard deviation; `None` with a single fold.
    pub sd: Option<MetricValues>,
}

pub fn crossval_aggregate(folds: &[MetricReport]) -> Result<CrossvalSummary, MetricError> {
    if folds.is_empty() {
        return Err(MetricError::Empty);
    }
    let k = folds.len() as f64;
    let arrays: Vec<[f64; 7]> = folds.iter().map(|f| f.values.to_array()).collect();
    let mut mean = [0.0; 7];
    for a in &arrays {
        for j in 0..7 {
            mean[j] += a[j] / k;
        }
    }
    let sd = (folds.len() > 1).then(|| {
        let mut var = [0.0; 7];
        for a in &arrays {
            for j in 0..7 {
                var[j] += (a[j] - mean[j]).powi(2) / (k - 1.0);
            }
        }
        MetricValues::from_array(var.map(f64::sqrt))
    });
    Ok(CrossvalSummary { folds: folds.to_vec(), mean: MetricValues::from_array(mean), sd })
}

/// Left-aligned first column, right-aligned rest, two-space gutters.
pub fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut w = header.iter().map(|h| h.chars().count()).collect::<Vec<_>>();
    for r in rows {
        for (j, cell) in r.iter().enumerate().take(cols) {
            w[j] = w[j].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let mut s = String::new();
        for (j, cell) in cells.iter().enumerate().take(cols) {
            let pad = w[j] - cell.chars().count();
            if j == 0 {
                s.push_str(cell);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(w.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
    }
    out
}
