use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentKind};
use crate::metrics::{crossval_aggregate, format_table, MetricReport, MetricValues, RocCurve, METRIC_NAMES};

/// One method or condition, evaluated once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub retain: Option<f64>,
    pub seeds: Vec<u64>,
    pub evals: Vec<MetricReport>,
    pub mean: MetricValues,
    pub sd: Option<MetricValues>,
    pub trainable_bytes: Option<usize>,
    pub base_bytes: Option<usize>,
    /// Curve of the first seed.
    #[serde(skip)]
    pub roc: Option<RocCurve>,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, seeds: Vec<u64>, evals: Vec<MetricReport>, roc: Option<RocCurve>) -> Result<Self, ExperimentError> {
        let summary = crossval_aggregate(&evals)?;
        Ok(Self {
            name: name.into(),
            retain: None,
            seeds,
            evals,
            mean: summary.mean,
            sd: summary.sd,
            trainable_bytes: None,
            base_bytes: None,
            roc,
        })
    }

    pub fn aucs(&self) -> Vec<f64> {
        self.evals.iter().map(|e| e.values.auc).collect()
    }

    fn auc_cell(&self) -> String {
        match (&self.sd, self.evals.as_slice()) {
            (None, [only]) => only.auc_with_ci(),
            (Some(sd), _) => format!("{:.4} ± {:.4}", self.mean.auc, sd.auc),
            _ => format!("{:.4}", self.mean.auc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub cohort_hash: String,
    pub rows: Vec<ReportRow>,
    /// Bayes AUC of the generating risk on each seed's test split (synthetic cohorts).
    pub oracle_auc: Vec<(u64, f64)>,
    pub notes: Vec<String>,
}

/// Wall-clock seconds per row; kept apart so the report body is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub rows: Vec<(String, f64)>,
}

impl Timings {
    pub fn add(&mut self, row: &str, seconds: f64) {
        match self.rows.iter_mut().find(|(r, _)| r == row) {
            Some((_, s)) => *s += seconds,
            None => self.rows.push((row.to_string(), seconds)),
        }
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|(r, s)| vec![r.clone(), format!("{s:.2}")]).collect();
        format_table(&["Row".into(), "Wall seconds".into()], &rows)
    }
}

impl ExperimentReport {
    pub fn row(&self, name: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Aligned table plus notes; contains nothing that varies between runs.
    pub fn to_text(&self) -> String {
        let mut header: Vec<String> = vec!["Method".into()];
        for m in METRIC_NAMES {
            header.push(if m == "AUC" { "AUC (95% CI)".into() } else { m.into() });
        }
        let with_trainable = self.rows.iter().any(|r| r.trainable_bytes.is_some());
        let with_base = self.rows.iter().any(|r| r.base_bytes.is_some());
        if with_trainable {
            header.push("Trainable bytes".into());
        }
        if with_base {
            header.push("Base bytes".into());
        }
        let bytes = |b: Option<usize>| b.map(|b| b.to_string()).unwrap_or_else(|| "-".into());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.name.clone()];
                for (m, v) in METRIC_NAMES.iter().zip(r.mean.to_array()) {
                    cells.push(if *m == "AUC" { r.auc_cell() } else { format!("{v:.4}") });
                }
                if with_trainable {
                    cells.push(bytes(r.trainable_bytes));
                }
                if with_base {
                    cells.push(bytes(r.base_bytes));
                }
                cells
            })
            .collect();
        let mut out = format!("experiment: {}\ncohort: {}\n\n", self.experiment, self.cohort_hash);
        out.push_str(&format_table(&header, &rows));
        if !self.oracle_auc.is_empty() {
            out.push('\n');
            for (seed, auc) in &self.oracle_auc {
                out.push_str(&format!("oracle AUC (seed {seed}): {auc:.4}\n"));
            }
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                out.push_str(n);
                out.push('\n');
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(src: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(src).map_err(|e| ExperimentError::Config(format!("not an experiment report: {e}")))
    }
}
