use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use nlr_eval::cascade::{CascadeError, ThresholdFile};
use nlr_eval::config::{Config, ConfigError};
use nlr_eval::corpus::{self, Corpus, CorpusError, CANDIDATES_FILE, SAMPLES_FILE};
use nlr_eval::judge::JudgeError;
use nlr_eval::metrics::MetricError;
use nlr_eval::report::ReportError;
use rayon::ThreadPool;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Cli;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_REMOTE: u8 = 3;

/// Bad flag combination or missing input that belongs in the config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(j) = cause.downcast_ref::<JudgeError>() {
            return match j {
                e if e.is_remote() => EXIT_REMOTE,
                JudgeError::InvalidParams(_) => EXIT_CONFIG,
                _ => EXIT_DATA,
            };
        }
        if cause.is::<CorpusError>()
            || cause.is::<CascadeError>()
            || cause.is::<MetricError>()
            || cause.is::<ReportError>()
        {
            return EXIT_DATA;
        }
    }
    EXIT_DATA
}

pub struct Ctx {
    pub config: Config,
    config_hash: String,
}

impl Ctx {
    pub fn new(cli: &Cli) -> Result<Self> {
        let mut config = match &cli.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(w) = cli.workers {
            config.workers = w;
        }
        if let Some(d) = &cli.cache_dir {
            config.cache_dir = d.clone();
        }
        config.validate()?;
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        Ok(Self {
            config,
            config_hash: hex::encode(Sha256::digest(&canonical)),
        })
    }

    pub fn load_corpus(&self, dir: &Path) -> Result<Corpus> {
        corpus::load_corpus(dir, self.config.exclusion_limit)
            .with_context(|| format!("loading corpus from {}", dir.display()))
    }

    pub fn pool(&self) -> Result<ThreadPool> {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers)
            .build()?)
    }

    /// Provenance record for an output produced by `command`.
    pub fn provenance<A: Serialize>(
        &self,
        command: &str,
        args: &A,
        corpus_dir: Option<&Path>,
        thresholds: Option<serde_json::Value>,
    ) -> Result<Provenance> {
        Ok(Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: self.config_hash.clone(),
            corpus_hash: corpus_dir.map(corpus_hash).transpose()?,
            thresholds,
            params: serde_json::to_value(&self.config.params)?,
            run_config: serde_json::to_value(args)?,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_hash: String,
    pub corpus_hash: Option<String>,
    pub thresholds: Option<serde_json::Value>,
    pub params: serde_json::Value,
    pub run_config: serde_json::Value,
}

impl Provenance {
    /// Records the inference parameters actually used.
    pub fn with_params(mut self, params: &nlr_eval::InferenceParams) -> Self {
        self.params = serde_json::to_value(params).expect("params serialize");
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Writes `<output>.provenance.json` next to a single-file output.
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".provenance.json");
        self.write(&output.with_file_name(name))
    }
}

/// SHA-256 over the corpus files, in a fixed order.
pub fn corpus_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in [SAMPLES_FILE, CANDIDATES_FILE] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn load_thresholds(source: &str) -> Result<ThresholdFile> {
    if source == "published" {
        return Ok(ThresholdFile::published());
    }
    Ok(ThresholdFile::load(Path::new(source))?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
