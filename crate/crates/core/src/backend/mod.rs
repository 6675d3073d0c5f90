//! Chat-completion client shared by every model-backed stage.
//!
//! [`BackendClient`] wraps a [`Transport`] (HTTP or the in-process stub) with
//! request throttling, timeouts and retries with jittered exponential backoff.

mod clock;
mod http;
mod stub;
mod throttle;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use clock::{Clock, ManualClock, SystemClock};
pub use http::HttpTransport;
pub use stub::{CallCounter, Fault, StubReply, StubTransport};
pub use throttle::{Permit, ThrottleGate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend exhausted after {attempts} attempts: {last_error}")]
    Exhausted { attempts: u32, last_error: String },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

/// Failure of a single attempt, before retry policy is applied.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("http status {status}")]
    Status { status: u16, body: String },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("unparseable payload: {0}")]
    InvalidResponse(String),
}

impl TransportError {
    pub fn is_transient(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            TransportError::InvalidResponse(_) => false,
        }
    }
}

fn default_timeout_ms() -> u64 {
    120_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    1_000
}
fn default_rpm() -> u32 {
    60
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Seeds the backoff jitter; unseeded clients draw from OS entropy.
    #[serde(default)]
    pub jitter_seed: Option<u64>,
}

impl BackendConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            requests_per_minute: default_rpm(),
            api_key_env: default_api_key_env(),
            jitter_seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::InvalidConfig("timeout must be > 0".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(BackendError::InvalidConfig("requests_per_minute must be > 0".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(BackendError::InvalidConfig("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Upper bound of the jitter window before retry number `retry` (0-based).
    pub fn backoff_ceiling(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(32)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub want_logprobs: bool,
    /// Caller-side correlation key; never sent over the wire.
    #[serde(skip)]
    pub request_key: Option<u64>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_output_tokens: 1024,
            want_logprobs: false,
            request_key: None,
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::user(content)])
    }

    pub fn with_key(mut self, key: u64) -> Self {
        self.request_key = Some(key);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let Some(last) = self.messages.last() else {
            return Err(BackendError::InvalidRequest("no messages".into()));
        };
        if last.role == Role::Assistant {
            return Err(BackendError::InvalidRequest("last message must be user or system".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_output_tokens must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Raw reply of one successful attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct RawReply {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatCompletion {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub latency: Duration,
    pub attempts: u32,
}

pub trait Transport: Send + Sync {
    fn send(&self, config: &BackendConfig, request: &ChatRequest) -> Result<RawReply, TransportError>;
}

/// Anything that can answer a chat request. Stages depend on this, not on
/// the concrete client.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, BackendError>;
}

pub struct BackendClient {
    config: BackendConfig,
    transport: Arc<dyn Transport>,
    throttle: Arc<ThrottleGate>,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha8Rng>,
}

impl BackendClient {
    pub fn new(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, BackendError> {
        config.validate()?;
        let throttle = Arc::new(ThrottleGate::new(config.requests_per_minute, clock.clone()));
        Ok(Self::with_throttle(config, transport, clock, throttle))
    }

    /// Uses an existing gate, so that several clients share one request budget.
    pub fn with_throttle(
        config: BackendConfig,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
        throttle: Arc<ThrottleGate>,
    ) -> Self {
        let rng = match config.jitter_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        Self {
            config,
            transport,
            throttle,
            clock,
            rng: Mutex::new(rng),
        }
    }

    pub fn http(config: BackendConfig) -> Result<Self, BackendError> {
        let transport = Arc::new(HttpTransport::new(&config)?);
        Self::new(config, transport, Arc::new(SystemClock))
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn throttle(&self) -> &Arc<ThrottleGate> {
        &self.throttle
    }

    /// Full-jitter delay for retry `retry`, clamped to be no shorter than
    /// the previous delay of the same request.
    fn next_backoff(&self, retry: u32, previous: Duration) -> Duration {
        let ceiling = self.config.backoff_ceiling(retry);
        let ceiling_ms = ceiling.as_millis() as u64;
        let drawn = if ceiling_ms == 0 {
            0
        } else {
            self.rng.lock().expect("rng lock").random_range(0..=ceiling_ms)
        };
        Duration::from_millis(drawn).max(previous)
    }

    /// Runs the request and also returns the backoff delays that were slept.
    pub fn complete_traced(&self, request: &ChatRequest) -> Result<(ChatCompletion, Vec<Duration>), (BackendError, Vec<Duration>)> {
        if let Err(e) = request.validate() {
            return Err((e, Vec::new()));
        }
        let started = self.clock.now();
        let max_attempts = self.config.max_retries + 1;
        let mut delays = Vec::new();
        let mut previous = Duration::ZERO;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let _permit = self.throttle.acquire();
            match self.transport.send(&self.config, request) {
                Ok(reply) => {
                    if let Some(lp) = &reply.token_logprobs {
                        if let Some(bad) = lp.iter().find(|t| t.logprob.is_nan() || t.logprob > 0.0) {
                            return Err((
                                BackendError::InvalidResponse(format!(
                                    "token {:?} has logprob {}",
                                    bad.token, bad.logprob
                                )),
                                delays,
                            ));
                        }
                    }
                    return Ok((
                        ChatCompletion {
                            text: reply.text,
                            token_logprobs: reply.token_logprobs,
                            latency: self.clock.now().saturating_sub(started),
                            attempts: attempt,
                        },
                        delays,
                    ));
                }
                Err(TransportError::InvalidResponse(msg)) => {
                    return Err((BackendError::InvalidResponse(msg), delays));
                }
                Err(TransportError::Status { status, body }) if !(status == 429 || status >= 500) => {
                    return Err((BackendError::Rejected { status, body }, delays));
                }
                Err(err) => {
                    if attempt >= max_attempts {
                        warn!(model = %self.config.model_name, attempts = attempt, error = %err, "backend exhausted");
                        return Err((
                            BackendError::Exhausted {
                                attempts: attempt,
                                last_error: err.to_string(),
                            },
                            delays,
                        ));
                    }
                    let delay = self.next_backoff(attempt - 1, previous);
                    debug!(attempt, ?delay, error = %err, "transient backend failure, backing off");
                    previous = delay;
                    delays.push(delay);
                    self.clock.sleep(delay);
                }
            }
        }
    }
}

impl ChatBackend for BackendClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, BackendError> {
        self.complete_traced(request).map(|(c, _)| c).map_err(|(e, _)| e)
    }
}
