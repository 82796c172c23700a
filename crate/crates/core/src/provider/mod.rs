//! OpenAI-compatible chat and embedding providers with caching and retries.
//!
//! [`Client`] is the only path the strategies use to reach a model. It looks
//! requests up in the response cache by [`cache_key`], sends misses through
//! a [`ChatBackend`] with bounded exponential backoff, and counts calls.

mod cache;
mod http;
mod mock;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prompting::RenderedChat;

pub use cache::{CacheRecord, ResponseCache};
pub use http::{HttpChatBackend, HttpEmbeddingProvider};
pub use mock::{
    default_lexicon, write_script, HashEmbeddingProvider, HeuristicMock, ScriptEntry, ScriptedMock,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Name of the environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout_secs: 60.0,
            max_retries: 3,
            api_key_env: None,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config("timeout_secs must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config("model must be set".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base: Duration::from_millis(self.backoff_base_ms),
            max: Duration::from_millis(self.backoff_max_ms),
        }
    }

    /// Reads the credential named by `api_key_env`. A named but unset
    /// variable is a configuration error.
    pub fn credential(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(format!("environment variable {var} is not set"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: RenderedChat,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn stop(content: impl Into<String>) -> Self {
        ChatResponse {
            content: content.into(),
            finish_reason: "stop".into(),
            usage: Usage::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

const CACHE_KEY_DOMAIN: &[u8] = b"subjcheck.chat.v1\0";

fn put_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_be_bytes());
    h.update(s.as_bytes());
}

/// SHA-256 over a canonical byte layout, hex encoded (64 chars).
///
/// Layout: the domain tag `subjcheck.chat.v1\0`; the model string; the
/// temperature as IEEE-754 bits (big-endian u64, `-0.0` folded into `0.0`);
/// `max_tokens` as big-endian u32; the message count as big-endian u64;
/// then role and content of each message. Every string is prefixed with
/// its byte length as big-endian u64.
pub fn cache_key(request: &ChatRequest) -> CacheKey {
    let mut h = Sha256::new();
    h.update(CACHE_KEY_DOMAIN);
    put_str(&mut h, &request.model);
    let temperature = if request.temperature == 0.0 { 0.0 } else { request.temperature };
    h.update(temperature.to_bits().to_be_bytes());
    h.update(request.max_tokens.to_be_bytes());
    h.update((request.messages.messages.len() as u64).to_be_bytes());
    for m in &request.messages.messages {
        let role = match m.role {
            crate::prompting::Role::System => "system",
            crate::prompting::Role::User => "user",
            crate::prompting::Role::Assistant => "assistant",
        };
        put_str(&mut h, role);
        put_str(&mut h, &m.content);
    }
    CacheKey(hex::encode(h.finalize()))
}

/// A failure reported by a backend for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    Transport(String),
    Status { status: u16, body: String },
    Decode(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            BackendError::Decode(_) => false,
        }
    }

    fn status(&self) -> Option<u16> {
        match self {
            BackendError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "transport: {m}"),
            BackendError::Status { status, body } => write!(f, "HTTP {status}: {body}"),
            BackendError::Decode(m) => write!(f, "decode: {m}"),
        }
    }
}

/// Something that can answer a chat request: an HTTP endpoint or a mock.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub max: Duration,
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): `base * 2^(retry-1)`
    /// capped at `max`, then jittered uniformly into `[d/2, d]`.
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.base.saturating_mul(1u32 << (retry - 1).min(20));
        let capped = exp.min(self.max);
        if capped.is_zero() {
            return capped;
        }
        let nanos = capped.as_nanos() as u64;
        Duration::from_nanos(rand::thread_rng().gen_range(nanos / 2..=nanos))
    }

    /// Runs `op` until it succeeds, fails permanently, or the retry budget
    /// is spent. `on_attempt` is told about every attempt.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> std::result::Result<T, BackendError>,
        mut on_attempt: impl FnMut(),
    ) -> Result<T> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            on_attempt();
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    let wait = self.delay(attempts);
                    tracing::debug!(attempt = attempts, error = %e, ?wait, "retrying provider call");
                    std::thread::sleep(wait);
                }
                Err(e) if e.is_retryable() => {
                    return Err(Error::Transport {
                        attempts,
                        status: e.status(),
                        message: e.to_string(),
                    })
                }
                Err(BackendError::Status { status, body }) => {
                    return Err(Error::Protocol { status, body })
                }
                Err(BackendError::Decode(m)) => return Err(Error::Decode(m)),
                Err(BackendError::Transport(m)) => {
                    return Err(Error::Transport {
                        attempts,
                        status: None,
                        message: m,
                    })
                }
            }
        }
    }
}

/// Call accounting shared by every clone of a [`Client`].
#[derive(Debug, Default)]
pub struct CallCounters {
    calls: AtomicU64,
    attempts: AtomicU64,
    cache_hits: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// Requests that missed the cache and went to the backend.
    pub calls: u64,
    /// Backend attempts, including retries.
    pub attempts: u64,
    pub cache_hits: u64,
}

impl std::ops::Add for CounterSnapshot {
    type Output = CounterSnapshot;

    fn add(self, o: CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            calls: self.calls + o.calls,
            attempts: self.attempts + o.attempts,
            cache_hits: self.cache_hits + o.cache_hits,
        }
    }
}

impl CallCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            calls: self.calls.load(Ordering::SeqCst),
            attempts: self.attempts.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// A named chat provider: config, backend, optional cache, counters.
#[derive(Clone)]
pub struct Client {
    name: String,
    config: ProviderConfig,
    backend: Arc<dyn ChatBackend>,
    cache: Option<Arc<ResponseCache>>,
    offline: bool,
    counters: Arc<CallCounters>,
    gate: Option<Arc<Gate>>,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("name", &self.name)
            .field("model", &self.config.model)
            .field("cached", &self.cache.is_some())
            .field("offline", &self.offline)
            .finish()
    }
}

impl Client {
    pub fn new(name: impl Into<String>, config: ProviderConfig, backend: Arc<dyn ChatBackend>) -> Result<Self> {
        config.validate()?;
        Ok(Client {
            name: name.into(),
            config,
            backend,
            cache: None,
            offline: false,
            counters: Arc::new(CallCounters::default()),
            gate: None,
        })
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Cache misses fail with [`Error::Offline`] instead of reaching the backend.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.gate = Some(Arc::new(Gate::new(n)));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    pub fn request(&self, messages: RenderedChat) -> ChatRequest {
        ChatRequest {
            model: self.config.model.clone(),
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        if request.messages.is_empty() {
            return Err(Error::Contract("chat request has no messages".into()));
        }
        let key = cache_key(request);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        if self.offline {
            return Err(Error::Offline {
                digest: key.to_string(),
            });
        }
        let _slot = self.gate.as_ref().map(|g| g.enter());
        self.counters.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.config.retry_policy().run(
            || self.backend.send(request),
            || {
                self.counters.attempts.fetch_add(1, Ordering::SeqCst);
            },
        )?;
        if let Some(cache) = &self.cache {
            cache.put(&key, request, &response)?;
        }
        Ok(response)
    }
}
