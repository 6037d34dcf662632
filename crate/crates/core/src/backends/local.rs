use std::sync::Arc;

use super::{Backend, BackendError, Capabilities};
use crate::lm::{decode_greedy, forward_from, LmError, LoraAdapter, ModelParams, Scalar, Tokenizer, BOS};

/// Teacher-forced Σ log p(cont[k] | prompt, cont[..k]). `prompt` must already
/// start with BOS.
pub fn continuation_loglik<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    prompt: &[u32],
    cont: &[u32],
) -> Result<f64, LmError> {
    if prompt.is_empty() || cont.is_empty() {
        return Err(LmError::Shape("prompt and continuation must be non-empty".into()));
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&cont[..cont.len() - 1]);
    let logits = forward_from(params, adapter, &seq, prompt.len() - 1)?;
    Ok(cont.iter().enumerate().map(|(k, &t)| log_softmax_at(logits.row(k), t as usize)).sum())
}

fn log_softmax_at<T: Scalar>(row: ndarray::ArrayView1<T>, t: usize) -> f64 {
    let v: Vec<f64> = row.iter().map(|x| x.to_f64().expect("finite")).collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v[t] - lse
}

/// The in-process model with an optional adapter.
pub struct LocalBackend<T> {
    pub name: String,
    pub tokenizer: Arc<Tokenizer>,
    pub params: Arc<ModelParams<T>>,
    pub adapter: Option<Arc<LoraAdapter<T>>>,
}

impl<T: Scalar> LocalBackend<T> {
    pub fn new(name: impl Into<String>, tokenizer: Arc<Tokenizer>, params: Arc<ModelParams<T>>, adapter: Option<Arc<LoraAdapter<T>>>) -> Self {
        Self { name: name.into(), tokenizer, params, adapter }
    }

    fn prompt_ids(&self, prompt: &str) -> Result<Vec<u32>, LmError> {
        let mut ids = vec![BOS];
        ids.extend(self.tokenizer.tokenize(prompt)?);
        Ok(ids)
    }
}

impl<T: Scalar> Backend for LocalBackend<T> {
    fn id(&self) -> String {
        format!("local:{}", self.name)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { token_logprobs: true, free_text: true }
    }

    fn sequence_loglik(&self, prompt: &str, continuation: &str) -> Result<f64, BackendError> {
        let p = self.prompt_ids(prompt)?;
        let c = self.tokenizer.tokenize(continuation)?;
        Ok(continuation_loglik(&self.params, self.adapter.as_deref(), &p, &c)?)
    }

    /// Single-token alternatives share one forward pass.
    fn loglik_pair(&self, prompt: &str, a: &str, b: &str) -> Result<(f64, f64), BackendError> {
        let p = self.prompt_ids(prompt)?;
        let ca = self.tokenizer.tokenize(a)?;
        let cb = self.tokenizer.tokenize(b)?;
        if let ([ta], [tb]) = (ca.as_slice(), cb.as_slice()) {
            let logits = forward_from(&self.params, self.adapter.as_deref(), &p, p.len() - 1)?;
            let row = logits.row(0);
            return Ok((log_softmax_at(row, *ta as usize), log_softmax_at(row, *tb as usize)));
        }
        let adapter = self.adapter.as_deref();
        Ok((continuation_loglik(&self.params, adapter, &p, &ca)?, continuation_loglik(&self.params, adapter, &p, &cb)?))
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        let p = self.prompt_ids(prompt)?;
        let room = self.params.config.context_len.saturating_sub(p.len());
        let out = decode_greedy(&self.params, self.adapter.as_deref(), &p, max_tokens.min(room), &[])?;
        Ok(self.tokenizer.detokenize(&out))
    }
}
