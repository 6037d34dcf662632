use super::lora::LoraAdapter;
use super::model::forward_from;
use super::params::ModelParams;
use super::tokenizer::EOS;
use super::{LmError, Scalar};

/// Greedy continuation of `prompt`. Ties go to the lowest id. The returned
/// tokens include the EOS or stop token that ended generation, if any.
pub fn decode_greedy<T: Scalar>(
    params: &ModelParams<T>,
    adapter: Option<&LoraAdapter<T>>,
    prompt: &[u32],
    max_new: usize,
    stop: &[u32],
) -> Result<Vec<u32>, LmError> {
    let context = params.config.context_len;
    if prompt.len() > context {
        return Err(LmError::SequenceTooLong { len: prompt.len(), context });
    }
    if prompt.is_empty() {
        return Err(LmError::Shape("empty prompt".into()));
    }
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && ids.len() < context {
        let logits = forward_from(params, adapter, &ids, ids.len() - 1)?;
        let row = logits.row(0);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        let next = best as u32;
        ids.push(next);
        out.push(next);
        if next == EOS || stop.contains(&next) {
            break;
        }
    }
    Ok(out)
}
