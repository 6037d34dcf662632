//! Confusion metrics, ROC/AUC with a pairwise oracle, percentile bootstrap and
//! cross-validation aggregation.

mod bootstrap;
mod confusion;
mod report;
mod roc;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use confusion::{confusion, summarize, youden_threshold, ConfusionCounts, Summary};
pub use report::{
    crossval_aggregate, evaluate, format_table, CrossvalSummary, MetricReport, MetricValues, METRIC_NAMES,
};
pub use roc::{auc_oracle, roc_auc, RocCurve};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("scored set is empty")]
    Empty,
    #[error("scored set has only one class")]
    SingleClass,
    #[error("invalid scored set: {0}")]
    Invalid(String),
    #[error("bootstrap statistic undefined on {0} consecutive resamples")]
    BootstrapExhausted(usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Parallel scores, binary labels and record ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub ids: Vec<String>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, ids: Vec<String>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() || scores.len() != ids.len() {
            return Err(MetricError::Invalid(format!(
                "{} scores, {} labels, {} ids",
                scores.len(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(MetricError::Invalid(format!("score {s} outside [0, 1]")));
        }
        Ok(Self { scores, labels, ids })
    }

    /// Ids default to the row index.
    pub fn unnamed(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self, MetricError> {
        let ids = (0..scores.len()).map(|i| i.to_string()).collect();
        Self::new(scores, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// CSV with header `patient_id,score,label` (label 0/1).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("patient_id,score,label\n");
        for i in 0..self.len() {
            out.push_str(&format!("{},{},{}\n", self.ids[i], self.scores[i], u8::from(self.labels[i])));
        }
        out
    }

    pub fn read_csv(path: &Path) -> Result<Self, MetricError> {
        let raw = std::fs::read_to_string(path).map_err(|e| MetricError::Io { path: path.display().to_string(), source: e })?;
        Self::from_csv_str(&raw)
    }

    pub fn from_csv_str(raw: &str) -> Result<Self, MetricError> {
        let mut rdr = csv::Reader::from_reader(raw.as_bytes());
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| MetricError::Invalid(format!("missing column {name:?}")))
        };
        let (ci, cs, cl) = (col("patient_id")?, col("score")?, col("label")?);
        let (mut ids, mut scores, mut labels) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| MetricError::Invalid(format!("row {}: bad {what}", row + 2));
            ids.push(rec.get(ci).ok_or_else(|| bad("patient_id"))?.to_string());
            scores.push(rec.get(cs).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| bad("score"))?);
            labels.push(match rec.get(cl).map(str::trim) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad("label")),
            });
        }
        Self::new(scores, labels, ids)
    }
}
