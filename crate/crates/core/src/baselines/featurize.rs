use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::cohort::{Cohort, FeatureKind, Record, Schema, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Encoding {
    Numeric { mean: f64, sd: f64 },
    OneHot { codes: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slot {
    feature: String,
    encoding: Encoding,
}

/// Standardized numerics, one-hot categories and one missing indicator per
/// feature. Statistics come from the training ids only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    slots: Vec<Slot>,
    columns: Vec<String>,
}

impl Featurizer {
    pub fn fit(cohort: &Cohort, train_ids: &[String]) -> Result<Self, BaselineError> {
        if train_ids.is_empty() {
            return Err(BaselineError::Input("no training ids".into()));
        }
        let train: Vec<&Record> = cohort.subset(train_ids).collect();
        if train.len() != train_ids.len() {
            return Err(BaselineError::Input("training id not present in cohort".into()));
        }
        Self::fit_records(&cohort.schema, &train)
    }

    pub fn fit_records(schema: &Schema, train: &[&Record]) -> Result<Self, BaselineError> {
        if train.is_empty() {
            return Err(BaselineError::Input("no training records".into()));
        }
        let mut slots = Vec::new();
        let mut columns = Vec::new();
        for f in &schema.features {
            match f.kind {
                FeatureKind::Numeric => {
                    let xs: Vec<f64> = train
                        .iter()
                        .filter_map(|r| match r.get(&f.name) {
                            Value::Numeric(n) => Some(n.value),
                            _ => None,
                        })
                        .collect();
                    let n = xs.len().max(1) as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                    columns.push(f.name.clone());
                    slots.push(Slot { feature: f.name.clone(), encoding: Encoding::Numeric { mean, sd } });
                }
                FeatureKind::Categorical | FeatureKind::Ordinal => {
                    let codes: Vec<String> = f.categories.iter().map(|c| c.code.clone()).collect();
                    columns.extend(codes.iter().map(|c| format!("{}={c}", f.name)));
                    slots.push(Slot { feature: f.name.clone(), encoding: Encoding::OneHot { codes } });
                }
            }
            columns.push(format!("{}_missing", f.name));
        }
        Ok(Self { slots, columns })
    }

    pub fn is_fitted(&self) -> bool {
        !self.slots.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn apply(&self, record: &Record) -> Result<Vec<f64>, BaselineError> {
        if !self.is_fitted() {
            return Err(BaselineError::NotFitted);
        }
        let mut out = Vec::with_capacity(self.dim());
        for slot in &self.slots {
            let v = record.get(&slot.feature);
            match &slot.encoding {
                Encoding::Numeric { mean, sd } => match v {
                    Value::Numeric(n) => out.extend([(n.value - mean) / sd, 0.0]),
                    _ => out.extend([0.0, 1.0]),
                },
                Encoding::OneHot { codes } => {
                    let hit = match v {
                        Value::Category(c) => codes.iter().position(|k| k == c),
                        _ => None,
                    };
                    out.extend(codes.iter().enumerate().map(|(i, _)| if Some(i) == hit { 1.0 } else { 0.0 }));
                    out.push(if hit.is_some() { 0.0 } else { 1.0 });
                }
            }
        }
        Ok(out)
    }

    /// Rows for `records`, in order.
    pub fn matrix<'a>(&self, records: impl IntoIterator<Item = &'a Record>) -> Result<Array2<f64>, BaselineError> {
        let rows: Vec<Vec<f64>> = records.into_iter().map(|r| self.apply(r)).collect::<Result<_, _>>()?;
        let n = rows.len();
        Ok(Array2::from_shape_vec((n, self.dim()), rows.concat()).expect("rows share the fitted width"))
    }

    /// Header of column names plus `label`, then one row per record.
    pub fn export_csv<'a>(&self, records: impl IntoIterator<Item = &'a Record>) -> Result<String, BaselineError> {
        let mut out = self.columns.join(",");
        out.push_str(",label\n");
        for r in records {
            let row = self.apply(r)?;
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push(',');
            out.push_str(&r.label.as_bit().map(|b| b.to_string()).unwrap_or_default());
            out.push('\n');
        }
        Ok(out)
    }
}

/// Binary labels of labeled records, erroring on unlabeled ones.
pub fn labels<'a>(records: impl IntoIterator<Item = &'a Record>) -> Result<Vec<bool>, BaselineError> {
    records
        .into_iter()
        .map(|r| r.label.as_bit().map(|b| b == 1).ok_or_else(|| BaselineError::Input(format!("{} is unlabeled", r.patient_id))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{synth_cohort, Label, SynthConfig};

    fn cohort() -> Cohort {
        let mut cfg = SynthConfig::preset("strong-signal").unwrap();
        cfg.n = 400;
        synth_cohort(&cfg, 3).unwrap().cohort
    }

    #[test]
    fn layout() {
        let c = cohort();
        let ids: Vec<String> = c.records.iter().map(|r| r.patient_id.clone()).collect();
        let f = Featurizer::fit(&c, &ids).unwrap();
        let sl = f.columns().iter().filter(|c| c.starts_with("sleeplessness")).count();
        assert_eq!(sl, 4);
        let missing_bmi = Record::new("x", Label::Hc);
        let v = f.apply(&missing_bmi).unwrap();
        let bmi = f.columns().iter().position(|c| c == "bmi").unwrap();
        assert_eq!((v[bmi], v[bmi + 1]), (0.0, 1.0));
    }

    #[test]
    fn train_columns_standardized() {
        let c = cohort();
        let ids: Vec<String> = c.records.iter().take(300).map(|r| r.patient_id.clone()).collect();
        let f = Featurizer::fit(&c, &ids).unwrap();
        let m = f.matrix(c.subset(&ids)).unwrap();
        for (j, name) in f.columns().iter().enumerate() {
            if c.schema.feature(name).is_some_and(|s| s.is_numeric()) {
                let ind = m.column(j + 1);
                let xs: Vec<f64> = m.column(j).iter().zip(ind).filter(|(_, &i)| i == 0.0).map(|(&x, _)| x).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() < 1e-9, "{name} mean {mean}");
                assert!((sd - 1.0).abs() < 1e-6, "{name} sd {sd}");
            }
        }
    }

    #[test]
    fn fit_uses_train_ids_only() {
        let c = cohort();
        let train: Vec<String> = c.records.iter().take(300).map(|r| r.patient_id.clone()).collect();
        let all: Vec<String> = c.records.iter().map(|r| r.patient_id.clone()).collect();
        assert_ne!(Featurizer::fit(&c, &train).unwrap(), Featurizer::fit(&c, &all).unwrap());
    }

    #[test]
    fn unfitted_apply_errors() {
        assert!(matches!(Featurizer::default().apply(&Record::new("x", Label::Hc)), Err(BaselineError::NotFitted)));
    }

    #[test]
    fn export_has_header_and_labels() {
        let c = cohort();
        let ids: Vec<String> = c.records.iter().map(|r| r.patient_id.clone()).collect();
        let f = Featurizer::fit(&c, &ids).unwrap();
        let csv = f.export_csv(c.records.iter().take(2)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ends_with(",label"));
        assert_eq!(lines[1].split(',').count(), f.dim() + 1);
    }
}
