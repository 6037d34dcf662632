//! Client for OpenAI-style completion and chat endpoints with a
//! content-addressed response cache and retry with exponential backoff.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, Capabilities, ChatModel};

pub const DEFAULT_API_KEY_ENV: &str = "MDDLLM_API_KEY";

/// Network seam: POST a JSON body, get back (status, body).
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<(u16, String), BackendError>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<(u16, String), BackendError> {
        let mut req = self.client.post(url).header("content-type", "application/json").body(body.to_string());
        if let Some(key) = bearer {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok((status, text))
    }
}

pub type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Completions URL, e.g. `http://host/v1/completions`.
    pub endpoint: String,
    /// Chat URL; defaults to the completions URL with `completions` replaced by `chat/completions`.
    #[serde(default)]
    pub chat_endpoint: Option<String>,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_delay")]
    pub base_delay_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_true")]
    pub token_logprobs: bool,
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}
fn default_retries() -> u32 {
    4
}
fn default_delay() -> u64 {
    500
}
fn default_in_flight() -> usize {
    4
}
fn default_true() -> bool {
    true
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            chat_endpoint: None,
            model: model.into(),
            api_key_env: default_key_env(),
            cache_dir: None,
            max_retries: default_retries(),
            base_delay_ms: default_delay(),
            max_in_flight: default_in_flight(),
            token_logprobs: true,
        }
    }

    fn chat_url(&self) -> String {
        self.chat_endpoint.clone().unwrap_or_else(|| self.endpoint.replace("/completions", "/chat/completions"))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    url: String,
    request: Json,
    response: String,
    timestamp: u64,
}

struct Permits {
    used: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut used = self.used.lock().expect("permit lock");
        while *used >= self.max {
            used = self.freed.wait(used).expect("permit lock");
        }
        *used += 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().expect("permit lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteClient {
    config: RemoteConfig,
    transport: Box<dyn Transport>,
    sleeper: Sleeper,
    permits: Permits,
    cache_lock: Mutex<()>,
    network_calls: AtomicUsize,
}

/// Body for scoring `prompt + continuation` from echoed log-probabilities.
pub fn completion_request(model: &str, text: &str, max_tokens: usize, echo: bool) -> Json {
    json!({
        "model": model,
        "prompt": text,
        "max_tokens": max_tokens,
        "temperature": 0,
        "logprobs": true,
        "echo": echo,
    })
}

fn field<'a>(v: &'a Json, path: &str) -> Result<&'a Json, BackendError> {
    let mut cur = v;
    for part in path.split('.') {
        cur = match part.parse::<usize>() {
            Ok(i) => cur.get(i),
            Err(_) => cur.get(part),
        }
        .ok_or_else(|| BackendError::Decode(format!("missing field {path}")))?;
    }
    Ok(cur)
}

/// Sums echoed token log-probs whose byte offset falls at or after `prompt_len`.
pub fn parse_echo_loglik(body: &str, prompt_len: usize) -> Result<f64, BackendError> {
    let v: Json = serde_json::from_str(body).map_err(|e| BackendError::Decode(format!("invalid JSON: {e}")))?;
    let lp = field(&v, "choices.0.logprobs")?;
    let offsets = field(lp, "text_offset")?
        .as_array()
        .ok_or_else(|| BackendError::Decode("text_offset is not an array".into()))?;
    let values = field(lp, "token_logprobs")?
        .as_array()
        .ok_or_else(|| BackendError::Decode("token_logprobs is not an array".into()))?;
    if offsets.len() != values.len() {
        return Err(BackendError::Decode("text_offset and token_logprobs differ in length".into()));
    }
    let mut total = 0.0;
    let mut seen = 0;
    for (o, lp) in offsets.iter().zip(values) {
        let o = o.as_u64().ok_or_else(|| BackendError::Decode("non-integer text_offset".into()))? as usize;
        if o >= prompt_len {
            total += lp.as_f64().ok_or_else(|| BackendError::Decode(format!("null logprob at offset {o}")))?;
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(BackendError::Decode("no continuation tokens echoed".into()));
    }
    Ok(total)
}

impl RemoteClient {
    pub fn new(config: RemoteConfig, transport: Box<dyn Transport>) -> Self {
        Self::with_sleeper(config, transport, Box::new(std::thread::sleep))
    }

    pub fn with_sleeper(config: RemoteConfig, transport: Box<dyn Transport>, sleeper: Sleeper) -> Self {
        let max = config.max_in_flight.max(1);
        Self {
            config,
            transport,
            sleeper,
            permits: Permits { used: Mutex::new(0), freed: Condvar::new(), max },
            cache_lock: Mutex::new(()),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn http(config: RemoteConfig) -> Result<Self, BackendError> {
        Ok(Self::new(config, Box::new(HttpTransport::new(Duration::from_secs(120))?)))
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// Requests that reached the transport, retries included.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn cache_path(&self, url: &str, request: &Json) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let mut h = Sha256::new();
        h.update(url.as_bytes());
        h.update([0u8]);
        h.update(request.to_string().as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(h.finalize()))))
    }

    /// POSTs `request`, serving from and recording into the cache.
    pub fn send(&self, url: &str, request: &Json) -> Result<String, BackendError> {
        let cache = self.cache_path(url, request);
        if let Some(path) = &cache {
            if let Ok(raw) = std::fs::read_to_string(path) {
                if let Ok(entry) = serde_json::from_str::<CacheEntry>(&raw) {
                    return Ok(entry.response);
                }
            }
        }
        let body = self.send_uncached(url, &request.to_string())?;
        if let Some(path) = cache {
            let _guard = self.cache_lock.lock().expect("cache lock");
            let dir = path.parent().expect("cache file has a parent");
            std::fs::create_dir_all(dir).map_err(|e| BackendError::io(dir, e))?;
            let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let entry = CacheEntry { url: url.to_string(), request: request.clone(), response: body.clone(), timestamp };
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, serde_json::to_vec_pretty(&entry).expect("serializable")).map_err(|e| BackendError::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| BackendError::io(&path, e))?;
        }
        Ok(body)
    }

    fn send_uncached(&self, url: &str, body: &str) -> Result<String, BackendError> {
        let key = std::env::var(&self.config.api_key_env).ok();
        let _permit = self.permits.acquire();
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                (self.sleeper)(Duration::from_millis(self.config.base_delay_ms << (attempt - 1).min(16)));
            }
            self.network_calls.fetch_add(1, Ordering::SeqCst);
            match self.transport.post(url, key.as_deref(), body) {
                Ok((200..=299, text)) => return Ok(text),
                Ok((status, text)) if status == 429 || status >= 500 => last = format!("HTTP {status}: {text}"),
                Ok((status, text)) => return Err(BackendError::Permanent { status, body: text }),
                Err(BackendError::Transport(e)) => last = e,
                Err(e) => return Err(e),
            }
            log::warn!("request to {url} failed (attempt {}): {last}", attempt + 1);
        }
        Err(BackendError::Transport(format!("retries exhausted: {last}")))
    }
}

impl Backend for RemoteClient {
    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { token_logprobs: self.config.token_logprobs, free_text: true }
    }

    fn sequence_loglik(&self, prompt: &str, continuation: &str) -> Result<f64, BackendError> {
        if !self.config.token_logprobs {
            return Err(BackendError::Capability(format!("{} does not return token log-probabilities", self.id())));
        }
        let text = format!("{prompt}{continuation}");
        let body = self.send(&self.config.endpoint, &completion_request(&self.config.model, &text, 0, true))?;
        parse_echo_loglik(&body, prompt.len())
    }

    fn generate(&self, prompt: &str, max_tokens: usize) -> Result<String, BackendError> {
        let body = self.send(&self.config.endpoint, &completion_request(&self.config.model, prompt, max_tokens, false))?;
        let v: Json = serde_json::from_str(&body).map_err(|e| BackendError::Decode(format!("invalid JSON: {e}")))?;
        field(&v, "choices.0.text")?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Decode("choices.0.text is not a string".into()))
    }
}

impl ChatModel for RemoteClient {
    fn model_name(&self) -> &str {
        &self.config.model
    }

    fn chat(&self, prompt: &str) -> Result<String, BackendError> {
        let request = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        });
        let body = self.send(&self.config.chat_url(), &request)?;
        let v: Json = serde_json::from_str(&body).map_err(|e| BackendError::Decode(format!("invalid JSON: {e}")))?;
        field(&v, "choices.0.message.content")?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Decode("choices.0.message.content is not a string".into()))
    }
}
