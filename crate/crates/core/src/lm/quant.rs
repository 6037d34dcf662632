//! Blockwise absmax 4-bit quantization.
//!
//! Each block of 64 consecutive elements (row-major) stores one f32 scale
//! `absmax / 7` and signed codes in [-7, 7], two per byte. Reconstruction error
//! per element is at most half a scale step.

use super::config::ModelConfig;
use super::params::{ModelParams, TensorRef};
use super::{LmError, Scalar};

pub const QUANT_BLOCK: usize = 64;
pub const QUANT_MAX: i8 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub scales: Vec<f32>,
    /// Two codes per byte, low nibble first, each stored as code + 8.
    pub packed: Vec<u8>,
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, i: usize) -> i8 {
        let byte = self.packed[i / 2];
        let nib = if i % 2 == 0 { byte & 0x0f } else { byte >> 4 };
        nib as i8 - 8
    }

    /// Packed codes plus one f32 scale per block.
    pub fn stored_bytes(&self) -> usize {
        self.packed.len() + 4 * self.scales.len()
    }
}

pub fn quantize<T: Scalar>(values: &[T], shape: &[usize]) -> Result<QuantizedTensor, LmError> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(LmError::Shape(format!("{} values for shape {shape:?}", values.len())));
    }
    let mut scales = Vec::with_capacity(values.len().div_ceil(QUANT_BLOCK));
    let mut packed = vec![0u8; values.len().div_ceil(2)];
    for (b, block) in values.chunks(QUANT_BLOCK).enumerate() {
        let absmax = block.iter().fold(0.0f64, |m, v| m.max(v.to_f64().unwrap_or(f64::NAN).abs()));
        if !absmax.is_finite() {
            return Err(LmError::NonFinite { tensor: "quantization input".into(), step: None });
        }
        let scale = (absmax / QUANT_MAX as f64) as f32;
        scales.push(scale);
        for (j, v) in block.iter().enumerate() {
            let code = if scale == 0.0 {
                0
            } else {
                (v.to_f64().expect("finite") / scale as f64).round().clamp(-(QUANT_MAX as f64), QUANT_MAX as f64) as i8
            };
            let i = b * QUANT_BLOCK + j;
            let nib = (code + 8) as u8;
            packed[i / 2] |= if i % 2 == 0 { nib } else { nib << 4 };
        }
    }
    Ok(QuantizedTensor { shape: shape.to_vec(), scales, packed })
}

pub fn dequantize<T: Scalar>(q: &QuantizedTensor) -> Vec<T> {
    (0..q.len())
        .map(|i| T::from_f64(q.code(i) as f64 * q.scales[i / QUANT_BLOCK] as f64).expect("finite"))
        .collect()
}

/// A base model whose matrices are held 4-bit; norm gains stay dense f32.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub config: ModelConfig,
    pub matrices: Vec<(String, QuantizedTensor)>,
    pub vectors: Vec<(String, Vec<f32>)>,
}

impl QuantizedModel {
    pub fn from_params<T: Scalar>(params: &ModelParams<T>) -> Result<Self, LmError> {
        let mut matrices = Vec::new();
        let mut vectors = Vec::new();
        for (name, t) in params.named_tensors() {
            match &t {
                TensorRef::Matrix(_) => matrices.push((name, quantize(t.as_slice(), &t.shape())?)),
                TensorRef::Vector(v) => vectors.push((name, v.iter().map(|x| x.to_f32().expect("finite")).collect())),
            }
        }
        Ok(Self { config: params.config, matrices, vectors })
    }

    /// Dense working copy used for compute.
    pub fn dequantize<T: Scalar>(&self) -> Result<ModelParams<T>, LmError> {
        let mut p = ModelParams::zeros(self.config);
        p.fill_from(|name, shape| {
            if let Some((_, q)) = self.matrices.iter().find(|(n, _)| n == name) {
                if q.shape != shape {
                    return Err(LmError::Shape(format!("{name}: stored {:?} vs {shape:?}", q.shape)));
                }
                return Ok(dequantize(q));
            }
            if let Some((_, v)) = self.vectors.iter().find(|(n, _)| n == name) {
                return Ok(v.iter().map(|&x| T::from_f32(x).expect("finite")).collect());
            }
            Err(LmError::Checkpoint(format!("missing tensor {name}")))
        })?;
        Ok(p)
    }

    pub fn stored_bytes(&self) -> usize {
        self.matrices.iter().map(|(_, q)| q.stored_bytes()).sum::<usize>()
            + self.vectors.iter().map(|(_, v)| 4 * v.len()).sum::<usize>()
    }

    /// Size of the same parameters held dense at 32 bits.
    pub fn dense_f32_bytes(&self) -> usize {
        4 * self.config.param_count()
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn constant_and_zero_blocks_round_trip() {
        let v = vec![0.25f32; 130];
        let q = quantize(&v, &[130]).unwrap();
        assert_eq!(dequantize::<f32>(&q), v);
        let z = vec![0.0f64; 64];
        let q = quantize(&z, &[8, 8]).unwrap();
        assert_eq!(q.scales, vec![0.0]);
        assert_eq!(dequantize::<f64>(&q), z);
    }

    #[test]
    fn blockwise_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0) * rng.random_range(0.0..1.0)).collect();
        let q = quantize(&v, &[10, 100]).unwrap();
        let back = dequantize::<f64>(&q);
        for (b, (orig, rec)) in v.chunks(QUANT_BLOCK).zip(back.chunks(QUANT_BLOCK)).enumerate() {
            let absmax = orig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!((q.scales[b] as f64 - absmax / 7.0).abs() <= absmax * 1e-7);
            for (x, y) in orig.iter().zip(rec) {
                assert!((x - y).abs() <= absmax / 14.0 * (1.0 + 1e-6), "block {b}");
            }
        }
        assert!((0..1000).all(|i| (-7..=7).contains(&q.code(i))));
    }

    #[test]
    fn megabyte_matrix_size() {
        let v = vec![1.0f32; 1024 * 1024];
        let q = quantize(&v, &[1024, 1024]).unwrap();
        assert_eq!(q.stored_bytes(), 589_824);
        let dense = 4 * v.len();
        assert_eq!(dense, 4_194_304);
        assert!((q.stored_bytes() as f64 / dense as f64) <= 0.15);
    }

    #[test]
    fn model_round_trip_and_memory() {
        let cfg = ModelConfig { layers: 2, heads: 4, embed_dim: 64, mlp_dim: 256, context_len: 64, vocab_size: 100 };
        let p = ModelParams::<f32>::init(cfg, 2).unwrap();
        let q = QuantizedModel::from_params(&p).unwrap();
        let d: ModelParams<f32> = q.dequantize().unwrap();
        assert_eq!(d.layers[0].attn_norm, p.layers[0].attn_norm);
        let max_err = d.layers[1].wq.iter().zip(p.layers[1].wq.iter()).fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(max_err > 0.0 && max_err < 0.02);
        assert!(q.stored_bytes() as f64 <= 0.3 * q.dense_f32_bytes() as f64);
    }
}
