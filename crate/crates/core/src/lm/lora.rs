//! Low-rank adapters: W' = W + (alpha/r)·(B A)ᵀ in the [d_in, d_out] layout.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{LoraConfig, LoraTarget, ModelConfig};
use super::params::{gaussian, ModelParams};
use super::{LmError, Scalar};

/// A: [r, d_in], B: [d_out, r].
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    pub a: Array2<T>,
    pub b: Array2<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<T> {
    pub config: LoraConfig,
    pub model: ModelConfig,
    /// layers[l][target.index()]
    pub layers: Vec<[Option<LoraPair<T>>; 6]>,
    pub head: Option<LoraPair<T>>,
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn new(model: ModelConfig, config: &LoraConfig) -> Result<Self, LmError> {
        if config.rank == 0 {
            return Err(LmError::Config("LoRA rank must be positive".into()));
        }
        if !(config.alpha.is_finite() && config.alpha > 0.0) {
            return Err(LmError::Config("LoRA alpha must be positive".into()));
        }
        if config.targets.is_empty() {
            return Err(LmError::Config("LoRA needs at least one target".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fresh = |t: LoraTarget| {
            let (d_in, d_out) = t.shape(&model);
            LoraPair { a: gaussian(config.rank, d_in, config.init_std, &mut rng), b: Array2::zeros((d_out, config.rank)) }
        };
        let mut layers = Vec::with_capacity(model.layers);
        for _ in 0..model.layers {
            let mut slots: [Option<LoraPair<T>>; 6] = Default::default();
            for &t in LoraTarget::ALL.iter().filter(|t| config.targets.contains(t)) {
                slots[t.index()] = Some(fresh(t));
            }
            layers.push(slots);
        }
        let head = config.targets.contains(&LoraTarget::Head).then(|| fresh(LoraTarget::Head));
        Ok(Self { config: config.clone(), model, layers, head })
    }

    pub fn scale(&self) -> T {
        T::from_f64(self.config.scale()).expect("finite")
    }

    /// The pair on `t` in `layer`; `layer` is ignored for the head.
    pub fn pair(&self, layer: usize, t: LoraTarget) -> Option<&LoraPair<T>> {
        match t {
            LoraTarget::Head => self.head.as_ref(),
            _ => self.layers.get(layer).and_then(|l| l[t.index()].as_ref()),
        }
    }

    pub fn pair_mut(&mut self, layer: usize, t: LoraTarget) -> Option<&mut LoraPair<T>> {
        match t {
            LoraTarget::Head => self.head.as_mut(),
            _ => self.layers.get_mut(layer).and_then(|l| l[t.index()].as_mut()),
        }
    }

    /// (name prefix, pair) in storage order: layers by target, then the head.
    pub fn pairs(&self) -> Vec<(String, &LoraPair<T>)> {
        let mut out = Vec::new();
        for (l, slots) in self.layers.iter().enumerate() {
            for t in LoraTarget::ALL {
                if let Some(p) = &slots[t.index()] {
                    out.push((format!("layers.{l}.{}", t.name()), p));
                }
            }
        }
        if let Some(p) = &self.head {
            out.push(("head".to_string(), p));
        }
        out
    }

    pub fn pairs_mut(&mut self) -> Vec<(String, &mut LoraPair<T>)> {
        let mut out = Vec::new();
        for (l, slots) in self.layers.iter_mut().enumerate() {
            for (t, slot) in LoraTarget::ALL.into_iter().zip(slots.iter_mut()) {
                if let Some(p) = slot {
                    out.push((format!("layers.{l}.{}", t.name()), p));
                }
            }
        }
        if let Some(p) = &mut self.head {
            out.push(("head".to_string(), p));
        }
        out
    }

    fn map_pairs<U>(&self, f: impl Fn(&Array2<T>) -> Array2<U>) -> LoraAdapter<U> {
        let g = |p: &LoraPair<T>| LoraPair { a: f(&p.a), b: f(&p.b) };
        LoraAdapter {
            config: self.config.clone(),
            model: self.model,
            layers: self.layers.iter().map(|slots| std::array::from_fn(|i| slots[i].as_ref().map(g))).collect(),
            head: self.head.as_ref().map(g),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map_pairs(|m| Array2::zeros(m.raw_dim()))
    }

    /// (name, slice) for every A and B, in storage order.
    pub fn named_slices(&self) -> Vec<(String, &[T])> {
        let mut out = Vec::new();
        for (prefix, p) in self.pairs() {
            out.push((format!("{prefix}.lora_a"), p.a.as_slice().expect("contiguous")));
            out.push((format!("{prefix}.lora_b"), p.b.as_slice().expect("contiguous")));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for (_, p) in self.pairs_mut() {
            out.push(p.a.as_slice_mut().expect("contiguous"));
            out.push(p.b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn bytes(&self) -> usize {
        self.num_params() * std::mem::size_of::<T>()
    }

    pub fn cast<U: Scalar>(&self) -> LoraAdapter<U> {
        self.map_pairs(|a| a.mapv(|x| U::from_f64(x.to_f64().expect("finite")).expect("finite")))
    }
}

/// Trainable adapter parameters: Σ over targets of r·(d_in + d_out).
pub fn lora_param_count(model: &ModelConfig, config: &LoraConfig) -> usize {
    config
        .targets
        .iter()
        .map(|&t| {
            let (i, o) = t.shape(model);
            let copies = if t == LoraTarget::Head { 1 } else { model.layers };
            copies * config.rank * (i + o)
        })
        .sum()
}

/// Freshly initialized adapter for `params`; the base is left untouched (frozen).
pub fn lora_inject<T: Scalar>(params: &ModelParams<T>, config: &LoraConfig) -> Result<LoraAdapter<T>, LmError> {
    LoraAdapter::new(params.config, config)
}

/// Folds the adapter into a copy of the base weights. Not idempotent: merging
/// the same adapter twice adds the delta twice.
pub fn lora_merge<T: Scalar>(params: &ModelParams<T>, adapter: &LoraAdapter<T>) -> Result<ModelParams<T>, LmError> {
    if adapter.model != params.config || adapter.layers.len() != params.layers.len() {
        return Err(LmError::Shape("adapter was built for a different model config".into()));
    }
    let mut merged = params.clone();
    let s = adapter.scale();
    let fold = |w: &mut Array2<T>, p: &LoraPair<T>, what: &str| {
        // (B A) is [d_out, d_in]; W is [d_in, d_out]
        let delta = p.a.t().dot(&p.b.t());
        if delta.shape() != w.shape() {
            return Err(LmError::Shape(format!("{what}: delta {:?} vs weight {:?}", delta.shape(), w.shape())));
        }
        w.scaled_add(s, &delta);
        Ok(())
    };
    for (l, slots) in adapter.layers.iter().enumerate() {
        for t in LoraTarget::ALL {
            if let Some(p) = &slots[t.index()] {
                fold(merged.layers[l].matrix_mut(t), p, &format!("layer {l} {}", t.name()))?;
            }
        }
    }
    if let Some(p) = &adapter.head {
        fold(&mut merged.head, p, "head")?;
    }
    Ok(merged)
}
