//! Remote LLM access for NLR generation and NLR judgment.
//!
//! [`JudgeClient`] wraps a [`ChatBackend`] with a persistent response
//! cache, bounded retries for transport failures, a per-endpoint
//! concurrency cap and an optional token-bucket rate limit. It is `Sync`
//! and meant to be shared across worker threads.

mod backend;
mod cache;
mod parse;
mod prompt;

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::ResultTable;

pub use backend::{Adapter, BackendError, ChatBackend, OpenAiChat, StubBackend, StubMode};
pub use cache::{CacheEntry, ResponseCache};
pub use parse::{parse_verdict, ParseStatus};
pub use prompt::{
    render_generation_prompt, render_judge_prompt, GENERATION_TEMPLATE, JUDGE_TEMPLATE,
};

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("{endpoint}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        last: BackendError,
    },
    #[error("{endpoint}: authentication failed: {message}")]
    Auth { endpoint: String, message: String },
    #[error("{endpoint}: request rejected: {message}")]
    Rejected { endpoint: String, message: String },
    #[error("{endpoint}: empty completion")]
    EmptyCompletion { endpoint: String },
    #[error("invalid inference parameters: {0}")]
    InvalidParams(String),
    #[error("cache write failed")]
    Cache(#[from] std::io::Error),
}

impl JudgeError {
    /// True when the remote service, not the caller, is at fault.
    pub fn is_remote(&self) -> bool {
        !matches!(self, JudgeError::InvalidParams(_) | JudgeError::Cache(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceParams {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub frequency_penalty: f64,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            max_new_tokens: 2000,
            temperature: 0.01,
            top_p: 0.95,
            top_k: 10,
            frequency_penalty: 1.1,
        }
    }
}

impl InferenceParams {
    pub fn validate(&self) -> Result<(), JudgeError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(JudgeError::InvalidParams(format!(
                "temperature {} < 0",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(JudgeError::InvalidParams(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if !self.frequency_penalty.is_finite() {
            return Err(JudgeError::InvalidParams(
                "frequency_penalty is not finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Generate,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRecord {
    pub task: Task,
    pub rendered: String,
    pub cache_key: String,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    task: Task,
    rendered: &'a str,
    model: &'a str,
    params: &'a InferenceParams,
    run_index: u32,
    /// 0 for the first ask, 1 for the re-ask after an unparseable verdict.
    attempt: u32,
}

impl PromptRecord {
    pub fn new(
        task: Task,
        rendered: String,
        model: &str,
        params: &InferenceParams,
        run_index: u32,
        attempt: u32,
    ) -> Self {
        let material = KeyMaterial {
            task,
            rendered: &rendered,
            model,
            params,
            run_index,
            attempt,
        };
        let bytes = serde_json::to_vec(&material).expect("key material serializes");
        let cache_key = hex::encode(Sha256::digest(&bytes));
        Self {
            task,
            rendered,
            cache_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    /// `Some(true)` means class 1. Present iff `parse_status` is `Parsed`.
    pub verdict: Option<bool>,
    pub raw_text: String,
    pub parse_status: ParseStatus,
    pub run_index: u32,
    pub cached: bool,
    /// Whether an unparseable first answer triggered a second ask.
    #[serde(default)]
    pub reasked: bool,
}

impl JudgeVerdict {
    /// Class label with the conservative fallback: an unparseable verdict
    /// counts as class 0.
    pub fn label(&self) -> u8 {
        u8::from(self.verdict == Some(true))
    }

    pub fn is_parse_failure(&self) -> bool {
        self.parse_status != ParseStatus::Parsed
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 8000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, failed_attempts: u32) -> Duration {
        let factor = 1u64 << failed_attempts.saturating_sub(1).min(20);
        Duration::from_millis(
            self.base_delay_ms
                .saturating_mul(factor)
                .min(self.max_delay_ms),
        )
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Limiter {
    max: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap_or_else(|p| p.into_inner());
        while *used >= self.max {
            used = self.freed.wait(used).unwrap_or_else(|p| p.into_inner());
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().unwrap_or_else(|p| p.into_inner());
        *used -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
struct TokenBucket {
    rate_per_sec: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    fn new(rate_per_sec: f64, burst: f64) -> Self {
        let burst = burst.max(1.0);
        Self {
            rate_per_sec,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    fn take(&self) {
        loop {
            let wait = {
                let mut st = self.state.lock().unwrap_or_else(|p| p.into_inner());
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate_per_sec;
                st.0 = (st.0 + refill).min(self.burst);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate_per_sec)
            };
            std::thread::sleep(wait);
        }
    }
}

/// A model endpoint with its transport, cache and limits.
pub struct JudgeClient {
    name: String,
    backend: Box<dyn ChatBackend>,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    limiter: Limiter,
    rate: Option<TokenBucket>,
}

impl std::fmt::Debug for JudgeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JudgeClient")
            .field("name", &self.name)
            .field("cache", &self.cache.as_ref().map(|c| c.dir().to_path_buf()))
            .field("max_concurrency", &self.limiter.max)
            .finish()
    }
}

impl JudgeClient {
    pub fn new(name: impl Into<String>, backend: Box<dyn ChatBackend>) -> Self {
        Self {
            name: name.into(),
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(1),
            rate: None,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_concurrency(mut self, max: usize) -> Self {
        self.limiter = Limiter::new(max);
        self
    }

    /// At most `rate_per_sec` requests per second on average, with bursts
    /// of up to `burst`.
    pub fn with_rate_limit(mut self, rate_per_sec: f64, burst: f64) -> Self {
        self.rate = (rate_per_sec > 0.0).then(|| TokenBucket::new(rate_per_sec, burst));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn call_remote(&self, prompt: &str, params: &InferenceParams) -> Result<String, JudgeError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            if let Some(rate) = &self.rate {
                rate.take();
            }
            let result = {
                let _permit = self.limiter.acquire();
                self.backend.complete(prompt, params)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(BackendError::Auth(message)) => {
                    return Err(JudgeError::Auth {
                        endpoint: self.name.clone(),
                        message,
                    })
                }
                Err(BackendError::Rejected(message)) => {
                    return Err(JudgeError::Rejected {
                        endpoint: self.name.clone(),
                        message,
                    })
                }
                Err(e) => {
                    log::debug!("{}: attempt {attempt}/{attempts} failed: {e}", self.name);
                    last = Some(e);
                }
            }
        }
        Err(JudgeError::Exhausted {
            endpoint: self.name.clone(),
            attempts,
            last: last.expect("at least one attempt ran"),
        })
    }

    /// Returns the completion for `record`, from cache when possible.
    pub fn complete(
        &self,
        record: &PromptRecord,
        params: &InferenceParams,
        run_index: u32,
    ) -> Result<(String, bool), JudgeError> {
        params.validate()?;
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&record.cache_key)) {
            return Ok((hit.raw_response, true));
        }
        let text = self.call_remote(&record.rendered, params)?;
        if let Some(cache) = &self.cache {
            cache.put(
                &record.cache_key,
                &CacheEntry::new(&record.rendered, &text, params, &self.name, run_index),
            )?;
        }
        Ok((text, false))
    }

    pub fn generate_nlr(
        &self,
        params: &InferenceParams,
        question: &str,
        table: &ResultTable,
    ) -> Result<Generation, JudgeError> {
        let record = PromptRecord::new(
            Task::Generate,
            render_generation_prompt(question, table),
            &self.name,
            params,
            0,
            0,
        );
        let (text, cached) = self.complete(&record, params, 0)?;
        if text.trim().is_empty() {
            return Err(JudgeError::EmptyCompletion {
                endpoint: self.name.clone(),
            });
        }
        Ok(Generation { text, cached })
    }

    /// Asks the judge whether `candidate` carries the same information as
    /// `reference`. An unparseable answer is asked once more; if that also
    /// fails to parse the verdict stays absent.
    pub fn judge(
        &self,
        params: &InferenceParams,
        question: &str,
        reference: &str,
        candidate: &str,
        run_index: u32,
    ) -> Result<JudgeVerdict, JudgeError> {
        let rendered = render_judge_prompt(question, reference, candidate);
        let first = PromptRecord::new(Task::Judge, rendered, &self.name, params, run_index, 0);
        let (raw, cached) = self.complete(&first, params, run_index)?;
        let (verdict, status) = parse_verdict(&raw);
        if status == ParseStatus::Parsed {
            return Ok(JudgeVerdict {
                verdict,
                raw_text: raw,
                parse_status: status,
                run_index,
                cached,
                reasked: false,
            });
        }
        let again = PromptRecord::new(
            Task::Judge,
            first.rendered,
            &self.name,
            params,
            run_index,
            1,
        );
        let (raw2, cached2) = self.complete(&again, params, run_index)?;
        let (verdict, status) = parse_verdict(&raw2);
        Ok(JudgeVerdict {
            verdict,
            raw_text: raw2,
            parse_status: status,
            run_index,
            cached: cached && cached2,
            reasked: true,
        })
    }
}
