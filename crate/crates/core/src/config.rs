//! Run configuration, read from a TOML file.
//!
//! ```toml
//! cache_dir = ".nlr-cache"
//! workers = 8
//! exclusion_limit = 500
//! uqdb_template = "Question: {question}\n\nResults:\n{results}"
//!
//! [params]              # inference parameters, defaults shown
//! max_new_tokens = 2000
//! temperature = 0.01
//! top_p = 0.95
//! top_k = 10
//! frequency_penalty = 1.1
//!
//! [retry]
//! attempts = 3
//! base_delay_ms = 500
//! max_delay_ms = 8000
//!
//! [[endpoints]]
//! name = "gpt-4o"
//! base_url = "https://api.openai.com/v1"
//! auth_env = "OPENAI_API_KEY"
//! adapter = "openai"            # or "openai-compatible"
//! max_concurrency = 4
//! request_timeout_secs = 120
//! rate_limit_per_sec = 5.0      # optional
//!
//! [[scorers]]
//! name = "bertscore-f1"
//! command = ["python3", "bertscore.py", "--f1"]   # or url = "http://..."
//! concurrent_safe = false
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DEFAULT_EXCLUSION_LIMIT, UQDB_TEMPLATE};
use crate::judge::{
    Adapter, InferenceParams, JudgeClient, OpenAiChat, ResponseCache, RetryPolicy, StubBackend,
    StubMode,
};
use crate::metrics::{CommandScorer, HttpScorer, ScorerRegistry};

/// Judge names starting with this select an offline stub backend.
pub const STUB_PREFIX: &str = "stub:";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("environment variable {var} for endpoint `{endpoint}` is not set")]
    MissingKey { endpoint: String, var: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    pub base_url: String,
    /// Model id sent to the API; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub adapter: Adapter,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default)]
    pub rate_limit_per_sec: Option<f64>,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub name: String,
    #[serde(default)]
    pub command: Option<Vec<String>>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub concurrent_safe: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cache_dir: PathBuf,
    pub workers: usize,
    pub exclusion_limit: usize,
    pub uqdb_template: String,
    pub params: InferenceParams,
    pub retry: RetryPolicy,
    pub endpoints: Vec<EndpointConfig>,
    pub scorers: Vec<ScorerConfig>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            cache_dir: PathBuf::from(".nlr-cache"),
            workers: 4,
            exclusion_limit: DEFAULT_EXCLUSION_LIMIT,
            uqdb_template: UQDB_TEMPLATE.to_string(),
            params: InferenceParams::default(),
            retry: RetryPolicy::default(),
            endpoints: Vec::new(),
            scorers: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.exclusion_limit < 3 {
            return Err(ConfigError::Invalid(
                "exclusion_limit must be at least 3".into(),
            ));
        }
        self.params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut names = HashSet::new();
        for e in &self.endpoints {
            if e.name.starts_with(STUB_PREFIX) {
                return Err(ConfigError::Invalid(format!(
                    "endpoint name `{}` uses the reserved stub prefix",
                    e.name
                )));
            }
            if !names.insert(e.name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate endpoint `{}`",
                    e.name
                )));
            }
            if e.max_concurrency == 0 {
                return Err(ConfigError::Invalid(format!(
                    "endpoint `{}`: max_concurrency must be at least 1",
                    e.name
                )));
            }
        }
        let mut names = HashSet::new();
        for s in &self.scorers {
            if !names.insert(s.name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate scorer `{}`",
                    s.name
                )));
            }
            if s.command.is_some() == s.url.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "scorer `{}` needs exactly one of command or url",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        self.endpoints.iter().find(|e| e.name == name)
    }

    /// Checks that `judge` names a stub or a configured endpoint whose key
    /// is present, without building anything.
    pub fn check_judge(&self, judge: &str) -> Result<(), ConfigError> {
        if let Some(mode) = judge.strip_prefix(STUB_PREFIX) {
            return mode
                .parse::<StubMode>()
                .map(|_| ())
                .map_err(ConfigError::Invalid);
        }
        let ep = self
            .endpoint(judge)
            .ok_or_else(|| ConfigError::UnknownEndpoint(judge.to_string()))?;
        if let Some(var) = &ep.auth_env {
            if std::env::var(var).is_err() {
                return Err(ConfigError::MissingKey {
                    endpoint: ep.name.clone(),
                    var: var.clone(),
                });
            }
        }
        Ok(())
    }

    /// Builds a cached client for `judge`: either `stub:<mode>` or the name
    /// of a configured endpoint.
    pub fn build_client(&self, judge: &str) -> Result<JudgeClient, ConfigError> {
        self.check_judge(judge)?;
        let cache = ResponseCache::new(&self.cache_dir);
        if let Some(mode) = judge.strip_prefix(STUB_PREFIX) {
            let mode = mode.parse::<StubMode>().map_err(ConfigError::Invalid)?;
            return Ok(JudgeClient::new(judge, Box::new(StubBackend::new(mode)))
                .with_cache(cache)
                .with_retry(RetryPolicy {
                    base_delay_ms: 0,
                    ..self.retry.clone()
                })
                .with_max_concurrency(self.workers));
        }
        let ep = self
            .endpoint(judge)
            .ok_or_else(|| ConfigError::UnknownEndpoint(judge.to_string()))?;
        let key = ep.auth_env.as_ref().and_then(|v| std::env::var(v).ok());
        let backend = OpenAiChat::new(
            &ep.base_url,
            ep.model.as_deref().unwrap_or(&ep.name),
            key,
            ep.adapter,
            Duration::from_secs(ep.request_timeout_secs),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut client = JudgeClient::new(&ep.name, Box::new(backend))
            .with_cache(cache)
            .with_retry(self.retry.clone())
            .with_max_concurrency(ep.max_concurrency);
        if let Some(rate) = ep.rate_limit_per_sec {
            client = client.with_rate_limit(rate, ep.max_concurrency as f64);
        }
        Ok(client)
    }

    pub fn build_registry(&self) -> Result<ScorerRegistry, ConfigError> {
        let mut reg = ScorerRegistry::new();
        for s in &self.scorers {
            match (&s.command, &s.url) {
                (Some(argv), None) => {
                    let scorer = CommandScorer::new(argv).ok_or_else(|| {
                        ConfigError::Invalid(format!("scorer `{}` has an empty command", s.name))
                    })?;
                    reg.register(&s.name, Box::new(scorer), s.concurrent_safe);
                }
                (None, Some(url)) => {
                    let scorer = HttpScorer::new(url, Duration::from_secs(s.timeout_secs))
                        .map_err(ConfigError::Invalid)?;
                    reg.register(&s.name, Box::new(scorer), s.concurrent_safe);
                }
                _ => unreachable!("validated"),
            }
        }
        Ok(reg)
    }
}
