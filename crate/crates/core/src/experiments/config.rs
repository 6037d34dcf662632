use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::baselines::{LogregConfig, MlpConfig};
use crate::lm::{LoraConfig, LoraTarget, ModelConfig, TrainConfig};
use crate::promptgen::TemplateKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Main,
    Templates,
    Finetune,
    Missing,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [ExperimentKind::Main, ExperimentKind::Templates, ExperimentKind::Finetune, ExperimentKind::Missing];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Main => "main",
            ExperimentKind::Templates => "templates",
            ExperimentKind::Finetune => "finetune",
            ExperimentKind::Missing => "missing",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment {s:?} (main, templates, finetune, missing)")))
    }
}

/// Where the cohort comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CohortSource {
    Synthetic { preset: String, n: Option<usize>, seed: u64 },
    File { path: String, schema: String },
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synthetic { preset: "strong-signal".into(), n: None, seed: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThresholdRule {
    Fixed { value: f64 },
    /// Youden's J on the training-set scores of each method.
    Youden,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Fixed { value: 0.5 }
    }
}

/// Which side of the split the retention mask applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Mask evaluation records of a model trained on full records.
    #[default]
    Eval,
    /// Mask training records too and retrain per ratio.
    Train,
}

/// Model size; vocabulary and context come from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self { layers: 2, heads: 4, embed_dim: 64, mlp_dim: 128 }
    }
}

impl ModelShape {
    pub fn with_corpus(self, vocab_size: usize, context_len: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            embed_dim: self.embed_dim,
            mlp_dim: self.mlp_dim,
            context_len,
            vocab_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cohort: CohortSource,
    pub template: TemplateKind,
    pub seeds: Vec<u64>,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub lora: LoraConfig,
    pub logreg: LogregConfig,
    pub mlp: MlpConfig,
    pub threshold: ThresholdRule,
    pub bootstrap_resamples: usize,
    /// Minority-to-majority ratio the training corpus is oversampled to; none keeps it as is.
    pub balance_ratio: Option<f64>,
    pub retain: Vec<f64>,
    pub mask_mode: MaskMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            cohort: CohortSource::default(),
            template: TemplateKind::Text,
            seeds: vec![1, 2, 3],
            model: ModelShape::default(),
            train: TrainConfig { peak_lr: 3e-3, batch_size: 16, epochs: 5, weight_decay: 0.01, ..TrainConfig::default() },
            lora: LoraConfig { rank: 8, alpha: 16.0, targets: vec![LoraTarget::Q, LoraTarget::V, LoraTarget::Head], ..LoraConfig::default() },
            logreg: LogregConfig::default(),
            mlp: MlpConfig::default(),
            threshold: ThresholdRule::default(),
            bootstrap_resamples: 1000,
            balance_ratio: Some(1.0),
            retain: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            mask_mode: MaskMode::Eval,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(src: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(src).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let src = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml_str(&src)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seeds must not be empty".into()));
        }
        if self.bootstrap_resamples == 0 {
            return Err(ExperimentError::Config("bootstrap_resamples must be positive".into()));
        }
        if let Some(r) = self.balance_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(ExperimentError::Config(format!("balance_ratio {r} outside (0, 1]")));
            }
        }
        if self.retain.is_empty() || self.retain.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(ExperimentError::Config("retain ratios must lie in (0, 1]".into()));
        }
        if let ThresholdRule::Fixed { value } = self.threshold {
            if !(0.0..=1.0).contains(&value) {
                return Err(ExperimentError::Config(format!("threshold {value} outside [0, 1]")));
            }
        }
        self.train.validate()?;
        self.model.with_corpus(8, 8).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_tables() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);

        let partial = ExperimentConfig::from_toml_str(
            "seeds = [4]\n[train]\nepochs = 1\n[cohort]\nkind = \"synthetic\"\npreset = \"ukb-like\"\nn = 300\nseed = 2\n",
        )
        .unwrap();
        assert_eq!(partial.seeds, vec![4]);
        assert_eq!(partial.train.epochs, 1);
        assert_eq!(partial.train.beta2, 0.95);
        assert_eq!(partial.cohort, CohortSource::Synthetic { preset: "ukb-like".into(), n: Some(300), seed: 2 });
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml_str("retain = [0.0]").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[model]\nembed_dim = 30\nheads = 4").is_err());
    }
}
