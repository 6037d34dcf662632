//! Synthetic cohorts with a planted logistic risk.
//!
//! Each record's features are drawn independently from per-feature marginals;
//! the label is Bernoulli(sigmoid(β·x + b)) where x is the featurization of the
//! *emitted* (rounded) values and b is solved so the mean risk over the drawn
//! sample equals the target prevalence. The risk itself is kept as the Bayes
//! oracle score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::record::{Cohort, Numeric, Provenance, Record, Value, Label};
use super::schema::Schema;
use super::CohortError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelGen {
    pub code: String,
    pub p: f64,
    #[serde(default)]
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    /// Clamped, rounded normal. `coef` applies per standard deviation.
    Normal { mean: f64, sd: f64, min: f64, max: f64, decimals: usize, #[serde(default)] coef: f64 },
    Categorical { levels: Vec<LevelGen> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGen {
    pub name: String,
    /// Probability the cell is Missing.
    #[serde(default)]
    pub missing: f64,
    pub dist: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    /// Built-in schema name the generated values are coded against.
    pub schema: String,
    pub n: usize,
    pub prevalence: f64,
    #[serde(rename = "feature")]
    pub features: Vec<FeatureGen>,
}

pub const PRESETS: [&str; 2] = ["ukb-like", "strong-signal"];

const UKB_LIKE: &str = include_str!("../../presets/ukb-like.toml");
const STRONG_SIGNAL: &str = include_str!("../../presets/strong-signal.toml");

impl SynthConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, CohortError> {
        let cfg: SynthConfig = toml::from_str(src).map_err(|e| CohortError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn preset(name: &str) -> Result<Self, CohortError> {
        match name {
            "ukb-like" => Self::from_toml_str(UKB_LIKE),
            "strong-signal" => Self::from_toml_str(STRONG_SIGNAL),
            other => Err(CohortError::Config(format!("unknown preset {other:?}"))),
        }
    }

    /// Built-in preset name or a path to a generator config file.
    pub fn resolve(name_or_path: &str) -> Result<Self, CohortError> {
        if PRESETS.contains(&name_or_path) {
            Self::preset(name_or_path)
        } else {
            let src = std::fs::read_to_string(name_or_path)
                .map_err(|e| CohortError::io(std::path::Path::new(name_or_path), e))?;
            Self::from_toml_str(&src)
        }
    }

    /// Same marginals with every coefficient zeroed.
    pub fn without_signal(mut self) -> Self {
        for f in &mut self.features {
            match &mut f.dist {
                Marginal::Normal { coef, .. } => *coef = 0.0,
                Marginal::Categorical { levels } => levels.iter_mut().for_each(|l| l.coef = 0.0),
            }
        }
        self
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), CohortError> {
        let bad = |m: String| Err(CohortError::Config(m));
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence {} outside (0, 1)", self.prevalence));
        }
        for f in &self.features {
            let Some(spec) = schema.feature(&f.name) else {
                return bad(format!("feature {:?} not in schema {:?}", f.name, schema.name));
            };
            if !(0.0..=1.0).contains(&f.missing) {
                return bad(format!("{}: missing rate {} outside [0, 1]", f.name, f.missing));
            }
            match &f.dist {
                Marginal::Normal { mean, sd, min, max, coef, .. } => {
                    if !spec.is_numeric() {
                        return bad(format!("{}: normal marginal on a categorical feature", f.name));
                    }
                    if ![*mean, *sd, *min, *max, *coef].iter().all(|v| v.is_finite()) || *sd <= 0.0 || min > max {
                        return bad(format!("{}: invalid normal marginal", f.name));
                    }
                }
                Marginal::Categorical { levels } => {
                    if spec.is_numeric() {
                        return bad(format!("{}: categorical marginal on a numeric feature", f.name));
                    }
                    let total: f64 = levels.iter().map(|l| l.p).sum();
                    if levels.is_empty() || (total - 1.0).abs() > 1e-6 || levels.iter().any(|l| l.p < 0.0) {
                        return bad(format!("{}: level probabilities must be non-negative and sum to 1", f.name));
                    }
                    for l in levels {
                        if !l.coef.is_finite() || !l.p.is_finite() {
                            return bad(format!("{}: non-finite coefficient for {:?}", f.name, l.code));
                        }
                        if spec.category(&l.code).is_none() {
                            return bad(format!("{}: unknown category {:?}", f.name, l.code));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// β·x for one record; Missing contributes zero.
    pub fn linear_predictor(&self, record: &Record) -> f64 {
        let mut z = 0.0;
        for f in &self.features {
            match (&f.dist, record.get(&f.name)) {
                (Marginal::Normal { mean, sd, coef, .. }, Value::Numeric(n)) => z += coef * (n.value - mean) / sd,
                (Marginal::Categorical { levels }, Value::Category(c)) => {
                    z += levels.iter().find(|l| &l.code == c).map_or(0.0, |l| l.coef)
                }
                _ => {}
            }
        }
        z
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intercept b with mean(sigmoid(z_i + b)) = prevalence, by bisection.
fn solve_intercept(z: &[f64], prevalence: f64) -> f64 {
    let mean_risk = |b: f64| z.iter().map(|&zi| sigmoid(zi + b)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_risk(mid) < prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub cohort: Cohort,
    pub intercept: f64,
}

/// Generates a cohort. Identical (config, seed) give identical cohorts.
pub fn synth_cohort(config: &SynthConfig, seed: u64) -> Result<SynthCohort, CohortError> {
    let schema = Schema::builtin(&config.schema)?;
    config.validate(&schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = config.n.to_string().len().max(6);

    let mut records = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let mut rec = Record::new(format!("P{:0width$}", i + 1), Label::Unlabeled);
        for f in &config.features {
            let missing = rng.random::<f64>() < f.missing;
            let value = match &f.dist {
                Marginal::Normal { mean, sd, min, max, decimals, .. } => {
                    let x: f64 = Normal::new(*mean, *sd).expect("validated").sample(&mut rng);
                    Value::Numeric(Numeric::with_decimals(x.clamp(*min, *max), *decimals))
                }
                Marginal::Categorical { levels } => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = &levels[levels.len() - 1].code;
                    for l in levels {
                        acc += l.p;
                        if u < acc {
                            pick = &l.code;
                            break;
                        }
                    }
                    Value::Category(pick.clone())
                }
            };
            rec.values.insert(f.name.clone(), if missing { Value::Missing } else { value });
        }
        records.push(rec);
    }

    let z: Vec<f64> = records.iter().map(|r| config.linear_predictor(r)).collect();
    let intercept = solve_intercept(&z, config.prevalence);
    let mut label_rng = ChaCha8Rng::seed_from_u64(seed);
    label_rng.set_stream(1);
    let mut oracle = Vec::with_capacity(records.len());
    for (rec, zi) in records.iter_mut().zip(&z) {
        let risk = sigmoid(zi + intercept);
        rec.label = if label_rng.random::<f64>() < risk { Label::Mdd } else { Label::Hc };
        oracle.push(risk);
    }

    let mut cohort = Cohort::new(schema, records, Provenance::Synthetic { seed, config: config.clone() })?;
    cohort.oracle = Some(oracle);
    Ok(SynthCohort { cohort, intercept })
}

/// Recomputes the Bayes risk of an emitted record.
pub fn oracle_risk(config: &SynthConfig, intercept: f64, record: &Record) -> f64 {
    sigmoid(config.linear_predictor(record) + intercept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(s, _)| *s).collect();
        let mut acc = 0.0;
        for p in &pos {
            for n in &neg {
                acc += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        acc / (pos.len() * neg.len()) as f64
    }

    fn labels(c: &Cohort) -> Vec<bool> {
        c.records.iter().map(|r| r.label == Label::Mdd).collect()
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let cfg = SynthConfig::preset(p).unwrap();
            cfg.validate(&Schema::builtin(&cfg.schema).unwrap()).unwrap();
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let mut cfg = SynthConfig::preset("ukb-like").unwrap();
        cfg.n = 300;
        let a = synth_cohort(&cfg, 11).unwrap().cohort;
        let b = synth_cohort(&cfg, 11).unwrap().cohort;
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        assert_eq!(a.oracle, b.oracle);
        let c = synth_cohort(&cfg, 12).unwrap().cohort;
        assert_ne!(a.to_csv_string(), c.to_csv_string());
    }

    #[test]
    fn oracle_recomputes_from_emitted_record() {
        let mut cfg = SynthConfig::preset("strong-signal").unwrap();
        cfg.n = 500;
        let s = synth_cohort(&cfg, 3).unwrap();
        let oracle = s.cohort.oracle.as_ref().unwrap();
        for (r, &o) in s.cohort.records.iter().zip(oracle) {
            assert_eq!(oracle_risk(&cfg, s.intercept, r), o);
        }
    }

    #[test]
    fn no_signal_gives_chance_auc() {
        let mut cfg = SynthConfig::preset("ukb-like").unwrap().without_signal();
        cfg.n = 10_000;
        cfg.prevalence = 0.3;
        let s = synth_cohort(&cfg, 5).unwrap();
        let auc = pairwise_auc(s.cohort.oracle.as_ref().unwrap(), &labels(&s.cohort));
        assert!((0.47..=0.53).contains(&auc), "{auc}");
    }

    #[test]
    fn prevalence_matches_cohort_ratio() {
        let mut cfg = SynthConfig::preset("ukb-like").unwrap();
        cfg.n = 10_000;
        let target = 12_715.0 / 274_348.0;
        assert!((cfg.prevalence - target).abs() < 1e-3);
        let s = synth_cohort(&cfg, 1).unwrap();
        let frac = labels(&s.cohort).iter().filter(|&&l| l).count() as f64 / cfg.n as f64;
        assert!((frac - target).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn strong_signal_oracle_auc() {
        let cfg = SynthConfig::preset("strong-signal").unwrap();
        let s = synth_cohort(&cfg, 7).unwrap();
        let auc = pairwise_auc(s.cohort.oracle.as_ref().unwrap(), &labels(&s.cohort));
        assert!(auc >= 0.95, "{auc}");
    }

    #[test]
    fn rejects_non_finite_coefficients() {
        let mut cfg = SynthConfig::preset("ukb-like").unwrap();
        if let Marginal::Normal { coef, .. } = &mut cfg.features[0].dist {
            *coef = f64::NAN;
        }
        assert!(matches!(synth_cohort(&cfg, 1), Err(CohortError::Config(_))));
    }
}
