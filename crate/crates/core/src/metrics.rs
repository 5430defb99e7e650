//! Lexical similarity scorers between a candidate NLR and a reference text.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Characters stripped from the start and end of every token. `%`, `$`,
/// `-`, `/` and `@` are kept so percentages, amounts, negative numbers and
/// URLs survive.
pub const EDGE_PUNCTUATION: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '`', '(', ')', '[', ']', '{', '}', '<', '>', '*',
    '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '\u{ab}', '\u{bb}', '\u{2026}',
];

/// Provider name that backs [`MetricKind::CosineEmbedding`].
pub const COSINE_EMBEDDING_PROVIDER: &str = "cosine-embedding";

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no external scorer registered under `{0}`")]
    UnregisteredProvider(String),
    #[error("scorer `{name}` returned {value}, expected a finite value in [0, 1]")]
    OutOfRange { name: String, value: f64 },
    #[error("scorer `{name}` failed: {message}")]
    Provider { name: String, message: String },
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("class {0} has no scored members")]
    EmptyClass(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    /// Wraps already-normalized tokens; empty strings are dropped.
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        TokenSequence(
            iter.into_iter()
                .map(Into::into)
                .filter(|t: &String| !t.is_empty())
                .collect(),
        )
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    text.split_whitespace()
        .map(|raw| raw.trim_matches(EDGE_PUNCTUATION).to_lowercase())
        .collect()
}

/// Recall, precision and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, reference: usize, candidate: usize) -> Prf {
        let ratio = |d: usize| {
            if d == 0 {
                0.0
            } else {
                overlap as f64 / d as f64
            }
        };
        let recall = ratio(reference);
        let precision = ratio(candidate);
        let f1 = if recall > 0.0 && precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        Prf {
            recall,
            precision,
            f1,
        }
    }

    pub fn get(&self, v: Variant) -> f64 {
        match v {
            Variant::Recall => self.recall,
            Variant::Precision => self.precision,
            Variant::F1 => self.f1,
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped overlap: each n-gram contributes the smaller of its
/// counts in candidate and reference.
pub fn rouge_n(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be positive");
    let cand = ngram_counts(&candidate.0, n);
    let refs = ngram_counts(&reference.0, n);
    let overlap = cand
        .iter()
        .map(|(g, &c)| refs.get(g).map_or(0, |&r| c.min(r)))
        .sum();
    Prf::from_counts(
        overlap,
        reference.len().saturating_sub(n - 1),
        candidate.len().saturating_sub(n - 1),
    )
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> Prf {
    let l = lcs_len(&candidate.0, &reference.0);
    Prf::from_counts(l, reference.len(), candidate.len())
}

/// Cosine of term-frequency vectors; 0 when either side is empty.
pub fn cosine_tf(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    let a = ngram_counts(&candidate.0, 1);
    let b = ngram_counts(&reference.0, 1);
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let dot: usize = a
        .iter()
        .map(|(t, &x)| x * b.get(t).copied().unwrap_or(0))
        .sum();
    let norm =
        |m: &HashMap<&[String], usize>| (m.values().map(|&v| (v * v) as f64).sum::<f64>()).sqrt();
    (dot as f64 / (norm(&a) * norm(&b))).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Recall,
    Precision,
    F1,
}

impl Variant {
    fn name(self) -> &'static str {
        match self {
            Variant::Recall => "recall",
            Variant::Precision => "precision",
            Variant::F1 => "f1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Rouge1(Variant),
    Rouge2(Variant),
    RougeL(Variant),
    CosineTf,
    CosineEmbedding,
    External(String),
}

impl MetricKind {
    /// The cascade's default metric.
    pub const DEFAULT: MetricKind = MetricKind::Rouge1(Variant::Recall);

    /// Every built-in kind that needs no external provider.
    pub fn builtins() -> Vec<MetricKind> {
        let mut out = Vec::new();
        for v in [Variant::Recall, Variant::Precision, Variant::F1] {
            out.push(MetricKind::Rouge1(v));
            out.push(MetricKind::Rouge2(v));
            out.push(MetricKind::RougeL(v));
        }
        out.sort();
        out.push(MetricKind::CosineTf);
        out
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Rouge1(v) => write!(f, "rouge1-{}", v.name()),
            MetricKind::Rouge2(v) => write!(f, "rouge2-{}", v.name()),
            MetricKind::RougeL(v) => write!(f, "rougel-{}", v.name()),
            MetricKind::CosineTf => f.write_str("cosine-tf"),
            MetricKind::CosineEmbedding => f.write_str("cosine-embedding"),
            MetricKind::External(name) => write!(f, "external:{name}"),
        }
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        if let Some(name) = lower.strip_prefix("external:") {
            if name.is_empty() {
                return Err(MetricError::UnknownMetric(s.into()));
            }
            return Ok(MetricKind::External(name.to_string()));
        }
        match lower.as_str() {
            "cosine-tf" | "cosine" => return Ok(MetricKind::CosineTf),
            "cosine-embedding" => return Ok(MetricKind::CosineEmbedding),
            _ => {}
        }
        let (family, variant) = lower
            .split_once('-')
            .ok_or_else(|| MetricError::UnknownMetric(s.into()))?;
        let variant = match variant {
            "recall" => Variant::Recall,
            "precision" => Variant::Precision,
            "f1" => Variant::F1,
            _ => return Err(MetricError::UnknownMetric(s.into())),
        };
        match family {
            "rouge1" => Ok(MetricKind::Rouge1(variant)),
            "rouge2" => Ok(MetricKind::Rouge2(variant)),
            "rougel" => Ok(MetricKind::RougeL(variant)),
            _ => Err(MetricError::UnknownMetric(s.into())),
        }
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
}

/// An out-of-process similarity scorer such as BERTScore or an embedding
/// cosine. Receives raw texts.
pub trait ExternalScorer: Send + Sync {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String>;
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    candidate: &'a str,
    reference: &'a str,
}

#[derive(Deserialize)]
struct ProviderResponse {
    value: f64,
}

/// Runs a command per call, writing the request JSON to its stdin and
/// reading `{"value": x}` from its stdout.
pub struct CommandScorer {
    program: String,
    args: Vec<String>,
}

impl CommandScorer {
    pub fn new(argv: &[String]) -> Option<Self> {
        let (program, args) = argv.split_first()?;
        Some(Self {
            program: program.clone(),
            args: args.to_vec(),
        })
    }
}

impl ExternalScorer for CommandScorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("spawn {}: {e}", self.program))?;
        let body = serde_json::to_vec(&ProviderRequest {
            candidate,
            reference,
        })
        .map_err(|e| e.to_string())?;
        {
            let mut stdin = child.stdin.take().ok_or("stdin unavailable")?;
            stdin.write_all(&body).map_err(|e| e.to_string())?;
        }
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        let resp: ProviderResponse =
            serde_json::from_slice(&out.stdout).map_err(|e| format!("bad response: {e}"))?;
        Ok(resp.value)
    }
}

/// POSTs the request JSON to a URL and reads `{"value": x}` back.
pub struct HttpScorer {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            url: url.into(),
            client,
        })
    }
}

impl ExternalScorer for HttpScorer {
    fn score(&self, candidate: &str, reference: &str) -> Result<f64, String> {
        let resp = self
            .client
            .post(&self.url)
            .json(&ProviderRequest {
                candidate,
                reference,
            })
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("HTTP {}", resp.status()));
        }
        let body: ProviderResponse = resp.json().map_err(|e| format!("bad response: {e}"))?;
        Ok(body.value)
    }
}

enum Provider {
    Concurrent(Box<dyn ExternalScorer>),
    Serialized(Mutex<Box<dyn ExternalScorer>>),
}

/// Named external scorers. Providers not declared concurrency-safe are
/// called one at a time.
#[derive(Default)]
pub struct ScorerRegistry {
    providers: HashMap<String, Provider>,
}

impl ScorerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        scorer: Box<dyn ExternalScorer>,
        concurrent_safe: bool,
    ) {
        let p = if concurrent_safe {
            Provider::Concurrent(scorer)
        } else {
            Provider::Serialized(Mutex::new(scorer))
        };
        self.providers.insert(name.into(), p);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.providers.contains_key(name)
    }

    fn call(&self, name: &str, candidate: &str, reference: &str) -> Result<f64, MetricError> {
        let provider = self
            .providers
            .get(name)
            .ok_or_else(|| MetricError::UnregisteredProvider(name.to_string()))?;
        let result = match provider {
            Provider::Concurrent(s) => s.score(candidate, reference),
            Provider::Serialized(m) => m
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .score(candidate, reference),
        };
        let value = result.map_err(|message| MetricError::Provider {
            name: name.to_string(),
            message,
        })?;
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(MetricError::OutOfRange {
                name: name.to_string(),
                value,
            });
        }
        Ok(value)
    }
}

impl fmt::Debug for ScorerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.providers.keys().collect();
        names.sort();
        f.debug_struct("ScorerRegistry")
            .field("providers", &names)
            .finish()
    }
}

/// Scores `candidate` against `reference` with the given metric.
pub fn score(
    kind: &MetricKind,
    candidate: &str,
    reference: &str,
    registry: &ScorerRegistry,
) -> Result<MetricScore, MetricError> {
    let value = match kind {
        MetricKind::CosineEmbedding => {
            registry.call(COSINE_EMBEDDING_PROVIDER, candidate, reference)?
        }
        MetricKind::External(name) => registry.call(name, candidate, reference)?,
        builtin => score_tokens(builtin, &tokenize(candidate), &tokenize(reference))
            .expect("built-in metric"),
    };
    Ok(MetricScore {
        kind: kind.clone(),
        value,
    })
}

/// Scores pre-tokenized inputs. Returns `None` for kinds that need an
/// external provider.
pub fn score_tokens(
    kind: &MetricKind,
    candidate: &TokenSequence,
    reference: &TokenSequence,
) -> Option<f64> {
    Some(match kind {
        MetricKind::Rouge1(v) => rouge_n(candidate, reference, 1).get(*v),
        MetricKind::Rouge2(v) => rouge_n(candidate, reference, 2).get(*v),
        MetricKind::RougeL(v) => rouge_l(candidate, reference).get(*v),
        MetricKind::CosineTf => cosine_tf(candidate, reference),
        MetricKind::CosineEmbedding | MetricKind::External(_) => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMedians {
    pub class0: f64,
    pub class1: f64,
    /// class1 - class0
    pub difference: f64,
}

/// Median with the lower middle value taken for even counts.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[(values.len() - 1) / 2])
}

/// Per-class medians of `(score, human_label)` pairs.
pub fn class_medians(scored: &[(f64, u8)]) -> Result<ClassMedians, MetricError> {
    let mut by_class: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for &(v, l) in scored {
        if let Some(bucket) = by_class.get_mut(l as usize) {
            bucket.push(v);
        }
    }
    let [mut c0, mut c1] = by_class;
    let class0 = lower_median(&mut c0).ok_or(MetricError::EmptyClass(0))?;
    let class1 = lower_median(&mut c1).ok_or(MetricError::EmptyClass(1))?;
    Ok(ClassMedians {
        class0,
        class1,
        difference: class1 - class0,
    })
}
