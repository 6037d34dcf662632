use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LoraTarget, ModelConfig};
use super::{LmError, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: Array1<T>,
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub mlp_norm: Array1<T>,
    pub w_up: Array2<T>,
    pub w_down: Array2<T>,
}

impl<T: Scalar> LayerParams<T> {
    /// Projection matrix for a target, stored as [d_in, d_out].
    pub fn matrix(&self, t: LoraTarget) -> &Array2<T> {
        match t {
            LoraTarget::Q => &self.wq,
            LoraTarget::K => &self.wk,
            LoraTarget::V => &self.wv,
            LoraTarget::O => &self.wo,
            LoraTarget::Up => &self.w_up,
            LoraTarget::Down => &self.w_down,
            LoraTarget::Head => panic!("the head is not a per-layer matrix"),
        }
    }

    pub fn matrix_mut(&mut self, t: LoraTarget) -> &mut Array2<T> {
        match t {
            LoraTarget::Q => &mut self.wq,
            LoraTarget::K => &mut self.wk,
            LoraTarget::V => &mut self.wv,
            LoraTarget::O => &mut self.wo,
            LoraTarget::Up => &mut self.w_up,
            LoraTarget::Down => &mut self.w_down,
            LoraTarget::Head => panic!("the head is not a per-layer matrix"),
        }
    }
}

/// Dense weights of the decoder. Linear maps are stored [d_in, d_out] (y = x W).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tok_emb: Array2<T>,
    pub pos_emb: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Array1<T>,
    pub head: Array2<T>,
}

/// A named view of one parameter tensor.
pub enum TensorRef<'a, T> {
    Vector(&'a Array1<T>),
    Matrix(&'a Array2<T>),
}

impl<T: Scalar> TensorRef<'_, T> {
    pub fn as_slice(&self) -> &[T] {
        match self {
            TensorRef::Vector(v) => v.as_slice().expect("contiguous"),
            TensorRef::Matrix(m) => m.as_slice().expect("contiguous"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vector(v) => vec![v.len()],
            TensorRef::Matrix(m) => m.shape().to_vec(),
        }
    }
}

pub(crate) fn gaussian<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::from_f64(normal.sample(rng)).expect("finite"))
}

impl<T: Scalar> ModelParams<T> {
    /// Random init: N(0, 0.02) matrices, residual-output projections scaled by
    /// 1/sqrt(2·layers), unit norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, LmError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, m, v) = (config.embed_dim, config.mlp_dim, config.vocab_size);
        let std = 0.02;
        let out_std = std / ((2 * config.layers) as f64).sqrt();
        let tok_emb = gaussian(v, d, std, &mut rng);
        let pos_emb = gaussian(config.context_len, d, std, &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                attn_norm: Array1::ones(d),
                wq: gaussian(d, d, std, &mut rng),
                wk: gaussian(d, d, std, &mut rng),
                wv: gaussian(d, d, std, &mut rng),
                wo: gaussian(d, d, out_std, &mut rng),
                mlp_norm: Array1::ones(d),
                w_up: gaussian(d, m, std, &mut rng),
                w_down: gaussian(m, d, out_std, &mut rng),
            })
            .collect();
        let head = gaussian(d, v, std, &mut rng);
        Ok(Self { config, tok_emb, pos_emb, layers, final_norm: Array1::ones(d), head })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(config: ModelConfig) -> Self {
        let (d, m, v) = (config.embed_dim, config.mlp_dim, config.vocab_size);
        Self {
            config,
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((config.context_len, d)),
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    attn_norm: Array1::zeros(d),
                    wq: Array2::zeros((d, d)),
                    wk: Array2::zeros((d, d)),
                    wv: Array2::zeros((d, d)),
                    wo: Array2::zeros((d, d)),
                    mlp_norm: Array1::zeros(d),
                    w_up: Array2::zeros((d, m)),
                    w_down: Array2::zeros((m, d)),
                })
                .collect(),
            final_norm: Array1::zeros(d),
            head: Array2::zeros((d, v)),
        }
    }

    /// Fills every tensor from `source(name, shape)`, which must return exactly
    /// `shape.product()` values.
    pub fn fill_from(&mut self, mut source: impl FnMut(&str, &[usize]) -> Result<Vec<T>, LmError>) -> Result<(), LmError> {
        let meta: Vec<(String, Vec<usize>)> = self.named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        for ((name, shape), dst) in meta.iter().zip(self.slices_mut()) {
            let data = source(name, shape)?;
            if data.len() != dst.len() {
                return Err(LmError::Shape(format!("{name}: {} values for shape {shape:?}", data.len())));
            }
            dst.copy_from_slice(&data);
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<T>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<T>| Array1::zeros(a.raw_dim());
        Self {
            config: self.config,
            tok_emb: z2(&self.tok_emb),
            pos_emb: z2(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: z1(&l.attn_norm),
                    wq: z2(&l.wq),
                    wk: z2(&l.wk),
                    wv: z2(&l.wv),
                    wo: z2(&l.wo),
                    mlp_norm: z1(&l.mlp_norm),
                    w_up: z2(&l.w_up),
                    w_down: z2(&l.w_down),
                })
                .collect(),
            final_norm: z1(&self.final_norm),
            head: z2(&self.head),
        }
    }

    /// Every tensor with its canonical name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, TensorRef<'_, T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), TensorRef::Matrix(&self.tok_emb)),
            ("pos_emb".to_string(), TensorRef::Matrix(&self.pos_emb)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), TensorRef::Vector(&l.attn_norm)));
            for t in [LoraTarget::Q, LoraTarget::K, LoraTarget::V, LoraTarget::O] {
                out.push((format!("layers.{i}.{}", t.name()), TensorRef::Matrix(l.matrix(t))));
            }
            out.push((format!("layers.{i}.mlp_norm"), TensorRef::Vector(&l.mlp_norm)));
            for t in [LoraTarget::Up, LoraTarget::Down] {
                out.push((format!("layers.{i}.{}", t.name()), TensorRef::Matrix(l.matrix(t))));
            }
        }
        out.push(("final_norm".to_string(), TensorRef::Vector(&self.final_norm)));
        out.push(("head".to_string(), TensorRef::Matrix(&self.head)));
        out
    }

    /// Mutable flat slices in `named_tensors` order.
    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![
            self.tok_emb.as_slice_mut().expect("contiguous"),
            self.pos_emb.as_slice_mut().expect("contiguous"),
        ];
        for l in &mut self.layers {
            out.push(l.attn_norm.as_slice_mut().expect("contiguous"));
            out.push(l.wq.as_slice_mut().expect("contiguous"));
            out.push(l.wk.as_slice_mut().expect("contiguous"));
            out.push(l.wv.as_slice_mut().expect("contiguous"));
            out.push(l.wo.as_slice_mut().expect("contiguous"));
            out.push(l.mlp_norm.as_slice_mut().expect("contiguous"));
            out.push(l.w_up.as_slice_mut().expect("contiguous"));
            out.push(l.w_down.as_slice_mut().expect("contiguous"));
        }
        out.push(self.final_norm.as_slice_mut().expect("contiguous"));
        out.push(self.head.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.as_slice().len()).sum()
    }

    /// Dense storage size at this precision.
    pub fn dense_bytes(&self) -> usize {
        self.num_params() * std::mem::size_of::<T>()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::from_f64(x.to_f64().expect("finite")).expect("finite"));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::from_f64(x.to_f64().expect("finite")).expect("finite"));
        ModelParams {
            config: self.config,
            tok_emb: c2(&self.tok_emb),
            pos_emb: c2(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: c1(&l.attn_norm),
                    wq: c2(&l.wq),
                    wk: c2(&l.wk),
                    wv: c2(&l.wv),
                    wo: c2(&l.wo),
                    mlp_norm: c1(&l.mlp_norm),
                    w_up: c2(&l.w_up),
                    w_down: c2(&l.w_down),
                })
                .collect(),
            final_norm: c1(&self.final_norm),
            head: c2(&self.head),
        }
    }

    pub fn check_finite(&self) -> Result<(), LmError> {
        for (name, t) in self.named_tensors() {
            if t.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(LmError::NonFinite { tensor: name, step: None });
            }
        }
        Ok(())
    }
}
