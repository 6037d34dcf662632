use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LoraConfig, TrainConfig};
use super::lora::{lora_inject, LoraAdapter};
use super::model::{accumulate_grad, Example, Grads};
use super::optim::{lr_at, AdamW};
use super::params::ModelParams;
use super::tokenizer::{Tokenizer, BOS, EOS};
use super::{LmError, Scalar};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub step_loss: Vec<f64>,
    pub step_lr: Vec<f64>,
    /// Mean step loss per epoch, including a trailing partial epoch.
    pub epoch_loss: Vec<f64>,
    pub wall_seconds: f64,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.step_loss.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAdapter<T> {
    pub adapter: LoraAdapter<T>,
    pub history: History,
}

/// `[BOS] prompt answer [EOS]`, shifted so every answer token and the closing
/// EOS are targets and the prompt is masked.
pub fn encode_example(tok: &Tokenizer, prompt: &str, answer: &str) -> Result<Example, LmError> {
    let mut ids = vec![BOS];
    ids.extend(tok.tokenize(prompt)?);
    let answer_start = ids.len();
    ids.extend(tok.tokenize(answer)?);
    ids.push(EOS);
    let n = ids.len() - 1;
    let targets = (0..n).map(|t| (t + 1 >= answer_start).then(|| ids[t + 1])).collect();
    ids.truncate(n);
    Ok(Example { ids, targets })
}

/// Trains a fresh adapter over a frozen base. Batches are drawn from a
/// per-epoch shuffle seeded by `tc.seed`; per-example gradients are summed in
/// batch order, so results do not depend on the thread count.
///
/// A quantized base is trained by passing its dequantized working copy.
pub fn train_sft<T: Scalar>(
    base: &ModelParams<T>,
    corpus: &[Example],
    tc: &TrainConfig,
    lc: &LoraConfig,
) -> Result<TrainedAdapter<T>, LmError> {
    tc.validate()?;
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let started = Instant::now();
    let mut adapter = lora_inject(base, lc)?;
    let sizes: Vec<usize> = adapter.named_slices().iter().map(|(_, s)| s.len()).collect();
    let mut opt = AdamW::<T>::new(tc, &sizes);
    let per_epoch = corpus.len().div_ceil(tc.batch_size);
    let total = per_epoch * tc.epochs;
    let limit = tc.max_steps.unwrap_or(total).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = History::default();
    let mut step = 0;
    'epochs: for _ in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0;
        for batch in order.chunks(tc.batch_size) {
            if step >= limit {
                if epoch_steps > 0 {
                    history.epoch_loss.push(epoch_sum / epoch_steps as f64);
                }
                break 'epochs;
            }
            let w = T::one() / T::from_usize(batch.len()).expect("small");
            let parts: Vec<Result<(T, Grads<T>), LmError>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Grads::new(base, Some(&adapter));
                    let loss = accumulate_grad(base, Some(&adapter), &corpus[i], w, &mut g)?;
                    Ok((loss, g))
                })
                .collect();
            let mut grads = Grads::new(base, Some(&adapter));
            let mut loss = T::zero();
            for part in parts {
                let (l, g) = part?;
                loss += l * w;
                grads.add(&g);
            }
            let loss = loss.to_f64().expect("finite");
            if !loss.is_finite() {
                return Err(LmError::NonFinite { tensor: "loss".into(), step: Some(step) });
            }
            grads.check_finite(Some(step))?;
            if tc.grad_clip > 0.0 {
                let norm = grads.norm().to_f64().expect("finite");
                if norm > tc.grad_clip {
                    grads.scale(T::from_f64(tc.grad_clip / norm).expect("finite"));
                }
            }
            let lr = lr_at(step, total, tc.warmup_fraction, tc.peak_lr);
            let gs: Vec<&[T]> = grads.named().into_iter().map(|(_, s)| s).collect();
            opt.step(adapter.slices_mut(), &gs, lr);
            history.step_loss.push(loss);
            history.step_lr.push(lr);
            epoch_sum += loss;
            epoch_steps += 1;
            step += 1;
        }
        history.epoch_loss.push(epoch_sum / epoch_steps as f64);
    }
    for (name, s) in adapter.named_slices() {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LmError::NonFinite { tensor: name, step: Some(step) });
        }
    }
    history.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainedAdapter { adapter, history })
}
