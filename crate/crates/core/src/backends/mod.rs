//! Yes/No classification by normalized continuation likelihood, over the local
//! model or a remote completions endpoint.

mod local;
mod remote;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use local::{continuation_loglik, LocalBackend};
pub use remote::{
    completion_request, parse_echo_loglik, HttpTransport, RemoteClient, RemoteConfig, Sleeper, Transport,
    DEFAULT_API_KEY_ENV,
};

use crate::lm::LmError;
use crate::promptgen::{verbalize, NO, YES};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend lacks capability: {0}")]
    Capability(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Permanent { status: u16, body: String },
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("backend config: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl BackendError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BackendError::Io { path: path.display().to_string(), source }
    }
}

/// Free-text chat, used for narrative paraphrases.
pub trait ChatModel: Send + Sync {
    fn model_name(&self) -> &str;
    fn chat(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub token_logprobs: bool,
    pub free_text: bool,
}

pub trait Backend: Send + Sync {
    /// Identifier stored in every `ClassScore`.
    fn id(&self) -> String;
    fn capabilities(&self) -> Capabilities;
    /// Σ log p(token | prefix) over the tokens of `continuation`.
    fn sequence_loglik(&self, prompt: &str, continuation: &str) -> Result<f64, BackendError>;
    /// Log-likelihoods of two alternative continuations of the same prompt.
    fn loglik_pair(&self, prompt: &str, a: &str, b: &str) -> Result<(f64, f64), BackendError> {
        Ok((self.sequence_loglik(prompt, a)?, self.sequence_loglik(prompt, b)?))
    }
    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub p_yes: f64,
    pub p_no: f64,
    pub loglik_yes: f64,
    pub loglik_no: f64,
    pub source: String,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ClassScore {
    /// Normalizes the two likelihoods in log space: p_yes = σ(ll_yes − ll_no).
    pub fn from_logliks(loglik_yes: f64, loglik_no: f64, source: impl Into<String>) -> Self {
        let diff = loglik_yes - loglik_no;
        Self { p_yes: sigmoid(diff), p_no: sigmoid(-diff), loglik_yes, loglik_no, source: source.into() }
    }
}

/// Continuation texts whose likelihoods are compared.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verbalizers {
    pub yes: String,
    pub no: String,
}

impl Default for Verbalizers {
    fn default() -> Self {
        Self { yes: verbalize(YES), no: verbalize(NO) }
    }
}

pub fn classify(backend: &dyn Backend, prompt: &str) -> Result<ClassScore, BackendError> {
    classify_with(backend, prompt, &Verbalizers::default())
}

pub fn classify_with(backend: &dyn Backend, prompt: &str, verbal: &Verbalizers) -> Result<ClassScore, BackendError> {
    if !backend.capabilities().token_logprobs {
        return Err(BackendError::Capability(format!("{} does not expose token log-probabilities", backend.id())));
    }
    let (y, n) = backend.loglik_pair(prompt, &verbal.yes, &verbal.no)?;
    Ok(ClassScore::from_logliks(y, n, backend.id()))
}

/// Scores many prompts in parallel; the output order follows `prompts`.
pub fn classify_many(backend: &dyn Backend, prompts: &[String]) -> Result<Vec<ClassScore>, BackendError> {
    prompts.par_iter().map(|p| classify(backend, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Prediction {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub prediction: Prediction,
    pub free_text: String,
    /// Informational only; the likelihood score stays canonical.
    pub parsed_probability: Option<f64>,
}

/// Follow-up appended after the predicted answer to ask for an explanation.
pub const RATIONALE_FOLLOWUP: &str =
    "\nExplain the reasoning behind this determination and state its probability.\nExplanation:";

pub const RATIONALE_MAX_TOKENS: usize = 64;

/// Extracts a "NN%" or "0.NN" probability literal, the percentage form first.
pub fn parse_probability(text: &str) -> Option<f64> {
    let b = text.as_bytes();
    let number_at = |start: usize| -> (usize, &str) {
        let mut end = start;
        let mut dot = false;
        while end < b.len() && (b[end].is_ascii_digit() || (b[end] == b'.' && !dot && end + 1 < b.len() && b[end + 1].is_ascii_digit())) {
            dot |= b[end] == b'.';
            end += 1;
        }
        (end, &text[start..end])
    };
    let mut fraction = None;
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() && (i == 0 || !(b[i - 1].is_ascii_digit() || b[i - 1] == b'.')) {
            let (end, lit) = number_at(i);
            if end < b.len() && b[end] == b'%' {
                if let Ok(v) = lit.parse::<f64>() {
                    if (0.0..=100.0).contains(&v) {
                        return Some(v / 100.0);
                    }
                }
            } else if fraction.is_none() && lit.starts_with("0.") {
                fraction = lit.parse::<f64>().ok();
            }
            i = end.max(i + 1);
        } else {
            i += 1;
        }
    }
    fraction
}

/// Classifies, then asks the backend to explain. A failed explanation still
/// returns the score, with an empty rationale and a warning.
pub fn classify_with_rationale(
    backend: &dyn Backend,
    prompt: &str,
) -> Result<(ClassScore, Rationale, Option<String>), BackendError> {
    let score = classify(backend, prompt)?;
    let prediction = if score.p_yes >= 0.5 { Prediction::Yes } else { Prediction::No };
    let answer = match prediction {
        Prediction::Yes => YES,
        Prediction::No => NO,
    };
    let followup = format!("{prompt}{}{RATIONALE_FOLLOWUP}", verbalize(answer));
    let generated = if backend.capabilities().free_text {
        backend.generate(&followup, RATIONALE_MAX_TOKENS)
    } else {
        Err(BackendError::Capability(format!("{} cannot generate free text", backend.id())))
    };
    let (free_text, warning) = match generated {
        Ok(t) => (t, None),
        Err(e) => (String::new(), Some(format!("rationale unavailable: {e}"))),
    };
    let parsed_probability = parse_probability(&free_text);
    Ok((score, Rationale { prediction, free_text, parsed_probability }, warning))
}
