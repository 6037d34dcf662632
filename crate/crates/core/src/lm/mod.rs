//! A small decoder-only transformer with hand-written backward pass, low-rank
//! adapters, 4-bit base quantization and an SFT training loop.

mod checkpoint;
mod config;
mod decode;
mod lora;
mod model;
mod optim;
mod params;
mod quant;
mod tokenizer;
mod train;

use std::path::Path;

pub use checkpoint::{load_adapter, load_base, save_adapter, save_base, save_quantized, StoredBase, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{LoraConfig, LoraTarget, ModelConfig, TrainConfig};
pub use decode::decode_greedy;
pub use lora::{lora_inject, lora_merge, lora_param_count, LoraAdapter, LoraPair};
pub use model::{
    backward, forward, forward_from, lm_loss, loss_and_dlogits, loss_and_grad, softmax_rows, Example, ForwardCache,
    Grads,
};
pub use optim::{lr_at, AdamW};
pub use params::{LayerParams, ModelParams, TensorRef};
pub use quant::{dequantize, quantize, QuantizedModel, QuantizedTensor, QUANT_BLOCK, QUANT_MAX};
pub use tokenizer::{pieces, Tokenizer, BOS, EOS, PAD, SPECIALS, UNK};
pub use train::{encode_example, train_sft, History, TrainedAdapter};

/// Floating-point element type the model is generic over (f32 or f64).
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Send
    + Sync
    + 'static
{
    /// Tag used in checkpoint tensor tables.
    const DTYPE: u8;
}

impl Scalar for f32 {
    const DTYPE: u8 = 0;
}

impl Scalar for f64 {
    const DTYPE: u8 = 1;
}

#[derive(Debug, thiserror::Error)]
pub enum LmError {
    #[error("vocabulary is empty")]
    EmptyVocab,
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown adapter target {0:?}")]
    UnknownTarget(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("sequence of {len} tokens exceeds context {context}")]
    SequenceTooLong { len: usize, context: usize },
    #[error("non-finite values in {tensor}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { tensor: String, step: Option<usize> },
    #[error("every target position is masked")]
    AllMasked,
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl LmError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LmError::Io { path: path.display().to_string(), source }
    }
}
