//! Random feature retention for the missing-data study.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PromptError;
use crate::cohort::{Record, Schema, Value};

/// ceil(ratio·k), robust to representation error such as 0.3·10.
pub fn retained_count(retain_ratio: f64, k: usize) -> usize {
    ((retain_ratio * k as f64) - 1e-9).ceil().max(0.0) as usize
}

fn check_ratio(retain_ratio: f64) -> Result<(), PromptError> {
    if retain_ratio > 0.0 && retain_ratio <= 1.0 {
        Ok(())
    } else {
        Err(PromptError::RetainRatio(retain_ratio))
    }
}

fn record_rng(seed: u64, patient_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(patient_id.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(bytes)
}

/// Names of the features kept for one record, in schema order.
pub fn kept_features(schema: &Schema, patient_id: &str, retain_ratio: f64, seed: u64) -> Result<Vec<String>, PromptError> {
    check_ratio(retain_ratio)?;
    let k = schema.len();
    let keep = retained_count(retain_ratio, k).min(k);
    let mut rng = record_rng(seed, patient_id);
    let mut idx = rand::seq::index::sample(&mut rng, k, keep).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| schema.features[i].name.clone()).collect())
}

/// Sets every feature outside the sampled subset to Missing; the label is untouched.
pub fn mask_features(record: &Record, schema: &Schema, retain_ratio: f64, seed: u64) -> Result<Record, PromptError> {
    let kept = kept_features(schema, &record.patient_id, retain_ratio, seed)?;
    let mut out = record.clone();
    for spec in &schema.features {
        if !kept.contains(&spec.name) && out.values.contains_key(&spec.name) {
            out.set(&spec.name, Value::Missing);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub retain_ratio: f64,
    pub seed: u64,
    pub kept: BTreeMap<String, Vec<String>>,
}

impl MaskPlan {
    pub fn build<'a>(records: impl IntoIterator<Item = &'a Record>, schema: &Schema, retain_ratio: f64, seed: u64) -> Result<Self, PromptError> {
        let mut kept = BTreeMap::new();
        for r in records {
            kept.insert(r.patient_id.clone(), kept_features(schema, &r.patient_id, retain_ratio, seed)?);
        }
        Ok(Self { retain_ratio, seed, kept })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{synth_cohort, Label, SynthConfig};

    fn full_record() -> (Record, Schema) {
        let mut cfg = SynthConfig::preset("strong-signal").unwrap();
        cfg.n = 1;
        for f in &mut cfg.features {
            f.missing = 0.0;
        }
        let c = synth_cohort(&cfg, 2).unwrap().cohort;
        (c.records[0].clone(), c.schema)
    }

    #[test]
    fn ratio_one_is_identity() {
        let (r, s) = full_record();
        assert_eq!(mask_features(&r, &s, 1.0, 9).unwrap(), r);
    }

    #[test]
    fn ratio_point_two_keeps_four() {
        let (r, s) = full_record();
        let m = mask_features(&r, &s, 0.2, 9).unwrap();
        assert_eq!(m.present(), 4);
        assert_eq!(m.label, r.label);
        assert_eq!(retained_count(0.4, 16), 7);
        assert_eq!(retained_count(0.3, 10), 3);
    }

    #[test]
    fn same_seed_and_id_same_subset() {
        let s = Schema::ukb16();
        assert_eq!(kept_features(&s, "p7", 0.6, 3).unwrap(), kept_features(&s, "p7", 0.6, 3).unwrap());
        assert_ne!(kept_features(&s, "p7", 0.6, 3).unwrap(), kept_features(&s, "p7", 0.6, 4).unwrap());
    }

    #[test]
    fn invalid_ratio() {
        let (r, s) = full_record();
        assert!(mask_features(&r, &s, 0.0, 1).is_err());
        assert!(mask_features(&r, &s, 1.01, 1).is_err());
    }

    #[test]
    fn retention_marginals() {
        let s = Schema::ukb16();
        let records: Vec<Record> = (0..10_000).map(|i| Record::new(format!("r{i}"), Label::Hc)).collect();
        for ratio in [0.2, 0.4, 0.6, 0.8] {
            let plan = MaskPlan::build(&records, &s, ratio, 17).unwrap();
            let expected = retained_count(ratio, 16) as f64 / 16.0;
            for spec in &s.features {
                let freq = plan.kept.values().filter(|k| k.contains(&spec.name)).count() as f64 / records.len() as f64;
                assert!((freq - expected).abs() <= 0.03, "{} at {ratio}: {freq}", spec.name);
                // the nominal ratio is within the rounding step of ceil()
                assert!(expected - ratio < 1.0 / 16.0 + 1e-12);
            }
        }
    }
}
