use serde::{Deserialize, Serialize};

use super::LmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub mlp_dim: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Default toy size: 4 layers, 4 heads, width 128, context 512.
    pub fn toy(vocab_size: usize) -> Self {
        Self { layers: 4, heads: 4, embed_dim: 128, mlp_dim: 512, context_len: 512, vocab_size }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let all_positive = [self.layers, self.heads, self.embed_dim, self.mlp_dim, self.context_len, self.vocab_size]
            .iter()
            .all(|&v| v > 0);
        if !all_positive {
            return Err(LmError::Config("all model dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(LmError::Config(format!(
                "embed_dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn param_count(&self) -> usize {
        let (d, m, v, c) = (self.embed_dim, self.mlp_dim, self.vocab_size, self.context_len);
        v * d + c * d + self.layers * (4 * d * d + 2 * d * m + 2 * d) + d + d * v
    }
}

/// Matrices an adapter can attach to. `Head` is the single output projection;
/// the rest exist once per layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoraTarget {
    Q,
    K,
    V,
    O,
    Up,
    Down,
    Head,
}

impl LoraTarget {
    /// Per-layer targets, in storage order.
    pub const ALL: [LoraTarget; 6] = [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O, LoraTarget::Up, LoraTarget::Down];

    pub fn name(self) -> &'static str {
        match self {
            LoraTarget::Q => "attn.q",
            LoraTarget::K => "attn.k",
            LoraTarget::V => "attn.v",
            LoraTarget::O => "attn.o",
            LoraTarget::Up => "mlp.up",
            LoraTarget::Down => "mlp.down",
            LoraTarget::Head => "head",
        }
    }

    pub fn parse(name: &str) -> Result<Self, LmError> {
        let short = name.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .chain([LoraTarget::Head])
            .find(|t| t.name() == short || t.name().ends_with(&format!(".{short}")))
            .ok_or_else(|| LmError::UnknownTarget(name.to_string()))
    }

    /// (d_in, d_out) of the target matrix.
    pub fn shape(self, cfg: &ModelConfig) -> (usize, usize) {
        match self {
            LoraTarget::Up => (cfg.embed_dim, cfg.mlp_dim),
            LoraTarget::Down => (cfg.mlp_dim, cfg.embed_dim),
            LoraTarget::Head => (cfg.embed_dim, cfg.vocab_size),
            _ => (cfg.embed_dim, cfg.embed_dim),
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<LoraTarget>,
    /// Std of the Gaussian used for A.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0, targets: vec![LoraTarget::Q, LoraTarget::V], init_std: 0.02, seed: 0 }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    /// Fraction of total steps spent in linear warm-up.
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop after this many optimizer steps when set (epochs still shape the schedule).
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_fraction: 0.1,
            weight_decay: 0.1,
            batch_size: 16,
            epochs: 5,
            seed: 0,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(LmError::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) || !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(LmError::Config("invalid learning-rate schedule".into()));
        }
        Ok(())
    }
}
