//! Corpus data model: samples with their SQL result tables, model-generated
//! candidate NLRs, JSON-lines ingestion, result-size bucketing, reference
//! construction for the GT and UQDB scenarios, and dataset statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::template;

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";

/// Samples with `rc + cc` at or above this are dropped at load time.
pub const DEFAULT_EXCLUSION_LIMIT: usize = 500;

/// Default UQDB reference template. `{question}` and `{results}` are the
/// only placeholders.
pub const UQDB_TEMPLATE: &str = "Question: {question}\n\nResults:\n{results}";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}:{line}: malformed record ({field}): {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{file}:{line}: duplicate sample id `{id}`")]
    DuplicateId {
        file: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{file}:{line}: candidate references unknown sample `{id}`")]
    UnknownSample {
        file: PathBuf,
        line: usize,
        id: String,
    },
    #[error("sample `{0}` has no ground-truth NLR; the GT scenario needs one")]
    MissingGroundTruth(String),
    #[error("result size {0} is below the minimum of 2")]
    SizeTooSmall(usize),
    #[error("exclusion limit must be at least 3, got {0}")]
    BadExclusionLimit(usize),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A SQL execution result. Cells are JSON scalars (string, number, boolean
/// or null).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Self, CorpusError> {
        if let Some(i) = columns.iter().position(|c| c.is_empty()) {
            return Err(CorpusError::InvalidTable(format!(
                "column {i} has an empty name"
            )));
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(CorpusError::InvalidTable(format!(
                    "row {r} has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            if let Some(c) = row.iter().position(|v| v.is_array() || v.is_object()) {
                return Err(CorpusError::InvalidTable(format!(
                    "row {r} cell {c} is not a scalar"
                )));
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }
}

/// Renders a table as record-per-line JSON: one object per row, keys in
/// column order, rows joined by `\n` with no trailing newline.
pub fn serialize_table(table: &ResultTable) -> String {
    let mut out = String::new();
    for (i, row) in table.rows.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push('{');
        for (j, (col, cell)) in table.columns.iter().zip(row).enumerate() {
            if j > 0 {
                out.push(',');
            }
            // serializing a str or a Value cannot fail
            out.push_str(&serde_json::to_string(col).expect("string serializes"));
            out.push(':');
            out.push_str(&serde_json::to_string(cell).expect("scalar serializes"));
        }
        out.push('}');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub question: String,
    pub sql: Option<String>,
    pub table: ResultTable,
    pub domain: String,
    pub gt_nlr: Option<String>,
}

impl Sample {
    /// `rc + cc`, the result-size measure.
    pub fn result_size(&self) -> usize {
        self.table.row_count() + self.table.column_count()
    }

    pub fn bucket(&self) -> Result<SizeBucket, CorpusError> {
        bucket(self.result_size())
    }
}

/// Result-size strata. Ranges are inclusive at the low end and exclusive at
/// the high end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    /// exactly 2 (one row, one column)
    Exact2,
    /// 3..10
    Small,
    /// 10..50
    Medium,
    /// 50..500
    Large,
    /// 500 and above
    Excluded,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 5] = [
        SizeBucket::Exact2,
        SizeBucket::Small,
        SizeBucket::Medium,
        SizeBucket::Large,
        SizeBucket::Excluded,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SizeBucket::Exact2 => "exact2",
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
            SizeBucket::Excluded => "excluded",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeBucket::Exact2 => "2",
            SizeBucket::Small => "3-9",
            SizeBucket::Medium => "10-49",
            SizeBucket::Large => "50-499",
            SizeBucket::Excluded => ">=500",
        }
    }
}

impl fmt::Display for SizeBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizeBucket {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SizeBucket::ALL
            .into_iter()
            .find(|b| b.name() == s || b.label() == s)
            .ok_or_else(|| CorpusError::UnknownName {
                kind: "size bucket",
                value: s.to_string(),
            })
    }
}

pub fn bucket(size: usize) -> Result<SizeBucket, CorpusError> {
    Ok(match size {
        0 | 1 => return Err(CorpusError::SizeTooSmall(size)),
        2 => SizeBucket::Exact2,
        3..=9 => SizeBucket::Small,
        10..=49 => SizeBucket::Medium,
        50..=499 => SizeBucket::Large,
        _ => SizeBucket::Excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "gt")]
    Gt,
    #[serde(rename = "uqdb")]
    Uqdb,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Gt => "gt",
            Scenario::Uqdb => "uqdb",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Ok(Scenario::Gt),
            "uqdb" => Ok(Scenario::Uqdb),
            _ => Err(CorpusError::UnknownName {
                kind: "scenario",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateNlr {
    pub sample_id: String,
    pub generator: String,
    pub text: String,
    #[serde(default)]
    pub human_label: Option<u8>,
    pub split: Split,
    #[serde(default)]
    pub error_reason: Option<String>,
}

/// Builds the reference text a candidate is compared against.
///
/// GT returns the ground-truth NLR verbatim and never looks at the table;
/// UQDB fills `template` with the question and the serialized table and
/// never looks at the ground truth.
pub fn build_reference_with(
    sample: &Sample,
    scenario: Scenario,
    template: &str,
) -> Result<String, CorpusError> {
    match scenario {
        Scenario::Gt => sample
            .gt_nlr
            .clone()
            .ok_or_else(|| CorpusError::MissingGroundTruth(sample.id.clone())),
        Scenario::Uqdb => Ok(template::fill(
            template,
            &[
                ("question", &sample.question),
                ("results", &serialize_table(&sample.table)),
            ],
        )),
    }
}

pub fn build_reference(sample: &Sample, scenario: Scenario) -> Result<String, CorpusError> {
    build_reference_with(sample, scenario, UQDB_TEMPLATE)
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
    candidates: Vec<CandidateNlr>,
    excluded: usize,
}

impl Corpus {
    /// Builds a corpus from in-memory parts, enforcing id uniqueness and
    /// candidate references. No exclusion is applied.
    pub fn from_parts(
        samples: Vec<Sample>,
        candidates: Vec<CandidateNlr>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, s) in samples.into_iter().enumerate() {
            if corpus.index.contains_key(&s.id) {
                return Err(CorpusError::DuplicateId {
                    file: PathBuf::from("<memory>"),
                    line: i + 1,
                    id: s.id,
                });
            }
            corpus.index.insert(s.id.clone(), corpus.samples.len());
            corpus.samples.push(s);
        }
        for (i, c) in candidates.into_iter().enumerate() {
            if !corpus.index.contains_key(&c.sample_id) {
                return Err(CorpusError::UnknownSample {
                    file: PathBuf::from("<memory>"),
                    line: i + 1,
                    id: c.sample_id,
                });
            }
            corpus.candidates.push(c);
        }
        Ok(corpus)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn candidates(&self) -> &[CandidateNlr] {
        &self.candidates
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    /// Number of samples dropped at load time for exceeding the size limit.
    pub fn excluded_count(&self) -> usize {
        self.excluded
    }

    pub fn candidates_in(&self, split: Split) -> impl Iterator<Item = &CandidateNlr> {
        self.candidates.iter().filter(move |c| c.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Keeps only the listed samples (and their candidates), in corpus order.
    pub fn restrict_to(&self, ids: &HashSet<&str>) -> Corpus {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| ids.contains(s.id.as_str()))
            .cloned()
            .collect();
        let candidates = self
            .candidates
            .iter()
            .filter(|c| ids.contains(c.sample_id.as_str()))
            .cloned()
            .collect();
        let mut out = Corpus::from_parts(samples, candidates).expect("subset of a valid corpus");
        out.excluded = self.excluded;
        out
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    question: String,
    #[serde(default)]
    sql: Option<String>,
    #[serde(default)]
    domain: String,
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    #[serde(default)]
    gt_nlr: Option<String>,
}

#[derive(Serialize)]
struct SampleRecordOut<'a> {
    id: &'a str,
    question: &'a str,
    sql: &'a Option<String>,
    domain: &'a str,
    columns: &'a [String],
    rows: &'a [Vec<Value>],
    gt_nlr: &'a Option<String>,
}

impl<'a> From<&'a Sample> for SampleRecordOut<'a> {
    fn from(s: &'a Sample) -> Self {
        SampleRecordOut {
            id: &s.id,
            question: &s.question,
            sql: &s.sql,
            domain: &s.domain,
            columns: s.table.columns(),
            rows: s.table.rows(),
            gt_nlr: &s.gt_nlr,
        }
    }
}

/// Pulls the offending field name out of a serde_json message when present.
fn serde_field(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    msg.split('`').nth(1).unwrap_or("record").to_string()
}

fn malformed(file: &Path, line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        file: file.to_path_buf(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Loads `samples.jsonl` (and `candidates.jsonl` when present) from `dir`.
///
/// Samples with `rc + cc >= exclusion_limit` are dropped together with
/// their candidates and counted in [`Corpus::excluded_count`].
pub fn load_corpus(dir: &Path, exclusion_limit: usize) -> Result<Corpus, CorpusError> {
    if exclusion_limit < 3 {
        return Err(CorpusError::BadExclusionLimit(exclusion_limit));
    }
    let samples_path = dir.join(SAMPLES_FILE);
    let mut corpus = Corpus::default();
    let mut excluded_ids = HashSet::new();
    let mut seen = HashSet::new();

    for (line_no, line) in read_lines(&samples_path)? {
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| malformed(&samples_path, line_no, &serde_field(&e), e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                file: samples_path.clone(),
                line: line_no,
                id: rec.id,
            });
        }
        let table = ResultTable::new(rec.columns, rec.rows).map_err(|e| {
            let field = match &e {
                CorpusError::InvalidTable(m) if m.starts_with("column") => "columns",
                _ => "rows",
            };
            malformed(&samples_path, line_no, field, e.to_string())
        })?;
        let sample = Sample {
            id: rec.id,
            question: rec.question,
            sql: rec.sql,
            table,
            domain: rec.domain,
            gt_nlr: rec.gt_nlr,
        };
        if sample.result_size() < 2 {
            return Err(malformed(
                &samples_path,
                line_no,
                "rows",
                format!("result size {} is below 2", sample.result_size()),
            ));
        }
        if sample.result_size() >= exclusion_limit {
            excluded_ids.insert(sample.id);
            corpus.excluded += 1;
            continue;
        }
        corpus.index.insert(sample.id.clone(), corpus.samples.len());
        corpus.samples.push(sample);
    }

    let cand_path = dir.join(CANDIDATES_FILE);
    if cand_path.exists() {
        for (line_no, line) in read_lines(&cand_path)? {
            let c: CandidateNlr = serde_json::from_str(&line)
                .map_err(|e| malformed(&cand_path, line_no, &serde_field(&e), e.to_string()))?;
            if let Some(l) = c.human_label {
                if l > 1 {
                    return Err(malformed(
                        &cand_path,
                        line_no,
                        "human_label",
                        format!("expected 0 or 1, got {l}"),
                    ));
                }
            }
            if excluded_ids.contains(&c.sample_id) {
                continue;
            }
            if !corpus.index.contains_key(&c.sample_id) {
                return Err(CorpusError::UnknownSample {
                    file: cand_path.clone(),
                    line: line_no,
                    id: c.sample_id,
                });
            }
            corpus.candidates.push(c);
        }
    }
    Ok(corpus)
}

pub fn write_samples_jsonl<W: Write>(mut w: W, samples: &[&Sample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, &SampleRecordOut::from(*s))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_candidates_jsonl<W: Write>(
    mut w: W,
    candidates: &[CandidateNlr],
) -> std::io::Result<()> {
    for c in candidates {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Whitespace-delimited word count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl Summary {
    /// Returns `None` for empty input. `std` uses the n-1 denominator and is
    /// 0 for a single value; percentiles are nearest-rank.
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean = sorted.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary {
            count: n,
            mean,
            std,
            min: sorted[0],
            p25: nearest_rank(&sorted, 25),
            p50: nearest_rank(&sorted, 50),
            p75: nearest_rank(&sorted, 75),
            max: sorted[n - 1],
        })
    }
}

/// Nearest-rank percentile over an ascending slice: the value at rank
/// `ceil(p/100 * n)`, clamped to at least 1.
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub chars: Summary,
    pub words: Summary,
}

impl TextStats {
    pub fn of<'a>(texts: impl IntoIterator<Item = &'a str>) -> Option<TextStats> {
        let (chars, words): (Vec<f64>, Vec<f64>) = texts
            .into_iter()
            .map(|t| (t.chars().count() as f64, word_count(t) as f64))
            .unzip();
        Some(TextStats {
            chars: Summary::of(&chars)?,
            words: Summary::of(&words)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub samples: usize,
    pub excluded: usize,
    pub per_bucket: BTreeMap<SizeBucket, TextStats>,
    pub overall: Option<TextStats>,
}

/// Character and word statistics of the ground-truth NLRs, per size bucket
/// and overall. Samples without a ground-truth NLR are not counted.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut grouped: BTreeMap<SizeBucket, Vec<&str>> = BTreeMap::new();
    let mut all = Vec::new();
    for s in corpus.samples() {
        let Some(nlr) = s.gt_nlr.as_deref() else {
            continue;
        };
        // loaded samples always have size >= 2
        let b = s.bucket().expect("loaded sample size >= 2");
        grouped.entry(b).or_default().push(nlr);
        all.push(nlr);
    }
    CorpusStats {
        samples: corpus.len(),
        excluded: corpus.excluded_count(),
        per_bucket: grouped
            .into_iter()
            .filter_map(|(b, texts)| TextStats::of(texts).map(|t| (b, t)))
            .collect(),
        overall: TextStats::of(all),
    }
}

/// Draws up to `per_bucket` samples uniformly from each of the Small,
/// Medium and Large buckets. Output keeps corpus order and depends only on
/// the corpus and `seed`.
pub fn stratified_sample(corpus: &Corpus, per_bucket: usize, seed: u64) -> Vec<&Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<&str> = HashSet::new();
    for b in [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large] {
        let pool: Vec<&Sample> = corpus
            .samples()
            .iter()
            .filter(|s| s.bucket().ok() == Some(b))
            .collect();
        for s in pool.choose_multiple(&mut rng, per_bucket.min(pool.len())) {
            chosen.insert(s.id.as_str());
        }
    }
    corpus
        .samples()
        .iter()
        .filter(|s| chosen.contains(s.id.as_str()))
        .collect()
}
