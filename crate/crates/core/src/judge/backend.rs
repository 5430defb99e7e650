//! Chat-completion transports. Each provider adapter maps the shared
//! [`InferenceParams`] onto its own wire schema.

use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::InferenceParams;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    /// Connection failures, timeouts, 429 and 5xx. Retried.
    #[error("transport: {0}")]
    Transport(String),
    #[error("authentication: {0}")]
    Auth(String),
    /// Any other non-success response. Not retried.
    #[error("rejected: {0}")]
    Rejected(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &InferenceParams) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Adapter {
    /// OpenAI chat completions. `top_k` has no equivalent and is dropped.
    #[default]
    Openai,
    /// OpenAI-shaped servers that also accept `top_k` (vLLM, TGI and
    /// similar).
    OpenaiCompatible,
}

impl Adapter {
    fn supports_top_k(self) -> bool {
        matches!(self, Adapter::OpenaiCompatible)
    }
}

pub struct OpenAiChat {
    url: String,
    model: String,
    api_key: Option<String>,
    adapter: Adapter,
    client: reqwest::blocking::Client,
    warned_top_k: AtomicBool,
}

impl OpenAiChat {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        adapter: Adapter,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            adapter,
            client,
            warned_top_k: AtomicBool::new(false),
        })
    }

    pub fn request_body(&self, prompt: &str, params: &InferenceParams) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "frequency_penalty": params.frequency_penalty,
        });
        if self.adapter.supports_top_k() {
            body["top_k"] = json!(params.top_k);
        } else if !self.warned_top_k.swap(true, Ordering::Relaxed) {
            log::warn!(
                "{}: adapter {:?} has no top_k parameter; dropping top_k={}",
                self.model,
                self.adapter,
                params.top_k
            );
        }
        body
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatBackend for OpenAiChat {
    fn complete(&self, prompt: &str, params: &InferenceParams) -> Result<String, BackendError> {
        let mut req = self
            .client
            .post(&self.url)
            .json(&self.request_body(prompt, params));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("HTTP {status}")));
        }
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(BackendError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Rejected(format!("HTTP {status}: {text}")));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::Transport(format!("unreadable response: {e}")))?;
        Ok(body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubMode {
    /// Always answers "True".
    True,
    /// Always answers "False".
    False,
    /// "True" or "False" by the parity of the prompt's SHA-256, so the
    /// answer depends only on the prompt.
    Alternate,
    /// Returns the given text verbatim.
    Text(String),
    /// Every call fails with a transport error.
    Fail,
}

impl FromStr for StubMode {
    type Err = String;

    /// Parses the part after `stub:`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "true" => Ok(StubMode::True),
            "false" => Ok(StubMode::False),
            "alternate" => Ok(StubMode::Alternate),
            "fail" => Ok(StubMode::Fail),
            _ => s
                .strip_prefix("text:")
                .map(|t| StubMode::Text(t.to_string()))
                .ok_or_else(|| format!("unknown stub mode `{s}`")),
        }
    }
}

/// Offline backend with call instrumentation.
#[derive(Debug)]
pub struct StubBackend {
    mode: StubMode,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl StubBackend {
    pub fn new(mode: StubMode) -> Self {
        Self {
            mode,
            delay: Duration::ZERO,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
        }
    }

    /// Holds each call open for `delay`, to make overlap observable.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    fn answer(&self, prompt: &str) -> Result<String, BackendError> {
        let truth = |b: bool| if b { "True" } else { "False" }.to_string();
        match &self.mode {
            StubMode::True => Ok(truth(true)),
            StubMode::False => Ok(truth(false)),
            StubMode::Alternate => Ok(truth(Sha256::digest(prompt.as_bytes())[0] % 2 == 0)),
            StubMode::Text(t) => Ok(t.clone()),
            StubMode::Fail => Err(BackendError::Transport("stub failure".into())),
        }
    }
}

impl ChatBackend for StubBackend {
    fn complete(&self, prompt: &str, _params: &InferenceParams) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = self.answer(prompt);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
