//! Scoring decisions against human labels and rendering reports.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{Decision, Method, Provenance};
use crate::corpus::{Scenario, SizeBucket};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Read {
        path: String,
        line: usize,
        message: String,
    },
    #[error("nothing to score: {0}")]
    Empty(&'static str),
    #[error("runs were scored on different sample sets (run {0} differs from run {1})")]
    MismatchedRuns(u32, u32),
}

/// One-vs-rest counts for both classes over the same predictions.
/// `fp1 == fn0` and `fp0 == fn1` always hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp1: u64,
    pub fp1: u64,
    pub fn1: u64,
    pub tp0: u64,
    pub fp0: u64,
    pub fn0: u64,
}

impl ConfusionCounts {
    pub fn new(tp1: u64, fp1: u64, fn1: u64, tp0: u64) -> Self {
        Self {
            tp1,
            fp1,
            fn1,
            tp0,
            fp0: fn1,
            fn0: fp1,
        }
    }

    /// Counts from `(predicted, human)` label pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let (mut tp1, mut fp1, mut fn1, mut tp0) = (0, 0, 0, 0);
        for (pred, human) in pairs {
            match (pred, human) {
                (1, 1) => tp1 += 1,
                (1, _) => fp1 += 1,
                (_, 1) => fn1 += 1,
                _ => tp0 += 1,
            }
        }
        Self::new(tp1, fp1, fn1, tp0)
    }

    pub fn total(&self) -> u64 {
        self.tp1 + self.fn1 + self.tp0 + self.fn0
    }

    /// `f1_0 + f1_1` as an exact fraction.
    pub fn f1_sum(&self) -> F1Sum {
        let frac = |tp: u64, fp: u64, fn_: u64| {
            let den = 2 * tp + fp + fn_;
            if den == 0 {
                (0u128, 1u128)
            } else {
                (2 * tp as u128, den as u128)
            }
        };
        let (a0, b0) = frac(self.tp0, self.fp0, self.fn0);
        let (a1, b1) = frac(self.tp1, self.fp1, self.fn1);
        F1Sum {
            num: a0 * b1 + a1 * b0,
            den: b0 * b1,
        }
    }

    pub fn scores(&self) -> ClassScores {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let per = |tp: u64, fp: u64, fn_: u64| PerClass {
            recall: ratio(tp, tp + fn_),
            precision: ratio(tp, tp + fp),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        };
        let class0 = per(self.tp0, self.fp0, self.fn0);
        let class1 = per(self.tp1, self.fp1, self.fn1);
        ClassScores {
            macro_recall: (class0.recall + class1.recall) / 2.0,
            macro_precision: (class0.precision + class1.precision) / 2.0,
            macro_f1: self.f1_sum().macro_f1(),
            accuracy: ratio(self.tp1 + self.tp0, self.total()),
            class0,
            class1,
        }
    }
}

/// Exact `f1_0 + f1_1`, ordered by value. Lets calibration compare macro F1
/// without floating-point ties.
#[derive(Debug, Clone, Copy)]
pub struct F1Sum {
    num: u128,
    den: u128,
}

impl F1Sum {
    pub fn macro_f1(&self) -> f64 {
        self.num as f64 / self.den as f64 / 2.0
    }
}

impl PartialEq for F1Sum {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for F1Sum {}

impl PartialOrd for F1Sum {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for F1Sum {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerClass {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScores {
    pub class0: PerClass,
    pub class1: PerClass,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl ClassScores {
    const FIELDS: usize = 10;

    fn to_array(self) -> [f64; Self::FIELDS] {
        [
            self.class0.recall,
            self.class0.precision,
            self.class0.f1,
            self.class1.recall,
            self.class1.precision,
            self.class1.f1,
            self.macro_recall,
            self.macro_precision,
            self.macro_f1,
            self.accuracy,
        ]
    }

    fn from_array(a: [f64; Self::FIELDS]) -> Self {
        ClassScores {
            class0: PerClass {
                recall: a[0],
                precision: a[1],
                f1: a[2],
            },
            class1: PerClass {
                recall: a[3],
                precision: a[4],
                f1: a[5],
            },
            macro_recall: a[6],
            macro_precision: a[7],
            macro_f1: a[8],
            accuracy: a[9],
        }
    }
}

/// Scores `(predicted, human)` label pairs.
pub fn score_labels(pairs: impl IntoIterator<Item = (u8, u8)>) -> ClassScores {
    ConfusionCounts::from_pairs(pairs).scores()
}

pub fn score_run(decisions: &[(Decision, u8)]) -> ClassScores {
    score_labels(decisions.iter().map(|(d, h)| (d.label, *h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean: ClassScores,
    /// Sample standard deviation (n-1); zero for a single run.
    pub std: ClassScores,
    pub n_runs: usize,
}

/// Field-wise mean and sample standard deviation. Returns `None` for no
/// runs.
pub fn aggregate_runs(runs: &[ClassScores]) -> Option<RunAggregate> {
    let n = runs.len();
    if n == 0 {
        return None;
    }
    let arrays: Vec<_> = runs.iter().map(|r| r.to_array()).collect();
    let mut mean = [0.0; ClassScores::FIELDS];
    let mut std = [0.0; ClassScores::FIELDS];
    for f in 0..ClassScores::FIELDS {
        // shifted by the first run so identical runs give exactly zero spread
        let base = arrays[0][f];
        let m = base + arrays.iter().map(|a| a[f] - base).sum::<f64>() / n as f64;
        mean[f] = m;
        if n > 1 {
            let ss: f64 = arrays.iter().map(|a| (a[f] - m).powi(2)).sum();
            std[f] = (ss / (n - 1) as f64).sqrt();
        }
    }
    Some(RunAggregate {
        mean: ClassScores::from_array(mean),
        std: ClassScores::from_array(std),
        n_runs: n,
    })
}

/// Fraction of decisions made without calling the judge.
pub fn call_savings<'a>(provenances: impl IntoIterator<Item = &'a Provenance>) -> Option<f64> {
    let (mut confident, mut total) = (0usize, 0usize);
    for p in provenances {
        total += 1;
        confident += usize::from(*p == Provenance::BandConfident);
    }
    (total > 0).then(|| confident as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BucketShare {
    pub count: usize,
    /// Share of all misjudged items, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SizeBreakdown {
    pub total_errors: usize,
    /// Only buckets with at least one misjudged item appear.
    pub buckets: BTreeMap<SizeBucket, BucketShare>,
}

/// Where the misjudged items fall by result size: `(predicted, human,
/// bucket)` triples in, per-bucket counts and percentages out.
pub fn misjudgment_by_size(items: impl IntoIterator<Item = (u8, u8, SizeBucket)>) -> SizeBreakdown {
    let mut counts: BTreeMap<SizeBucket, usize> = BTreeMap::new();
    let mut total = 0;
    for (pred, human, bucket) in items {
        if pred != human {
            *counts.entry(bucket).or_default() += 1;
            total += 1;
        }
    }
    SizeBreakdown {
        total_errors: total,
        buckets: counts
            .into_iter()
            .map(|(b, count)| {
                (
                    b,
                    BucketShare {
                        count,
                        percent: 100.0 * count as f64 / total as f64,
                    },
                )
            })
            .collect(),
    }
}

/// Share of each generator's NLRs that the method judged correct, best
/// first; equal shares are ordered by name.
pub fn rank_generators<'a>(items: impl IntoIterator<Item = (&'a str, u8)>) -> Vec<(String, f64)> {
    let mut tally: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (g, label) in items {
        let t = tally.entry(g).or_default();
        t.0 += usize::from(label == 1);
        t.1 += 1;
    }
    let mut out: Vec<(String, f64)> = tally
        .into_iter()
        .map(|(g, (ok, n))| (g.to_string(), ok as f64 / n as f64))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// One line of `decisions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub sample_id: String,
    pub generator: String,
    pub scenario: Scenario,
    pub method: Method,
    pub judge_model: Option<String>,
    pub run_index: u32,
    pub metric_value: f64,
    pub label: u8,
    pub provenance: Provenance,
    pub human_label: Option<u8>,
    #[serde(default)]
    pub parse_failure: bool,
}

pub fn write_decisions<W: Write>(mut w: W, records: &[DecisionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>, ReportError> {
    let p = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| ReportError::Read {
        path: p.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ReportError::Read {
            path: p.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Read {
            path: p.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub scenario: Scenario,
    pub judge_model: Option<String>,
    /// `None` when no decision carried a human label.
    pub scores: Option<RunAggregate>,
    pub call_fraction_saved: f64,
    pub size_breakdown: SizeBreakdown,
    pub parse_failure_count: usize,
    pub n_decisions: usize,
    pub generator_ranking: Vec<(String, f64)>,
}

/// Builds a report from decision records of one (method, scenario, judge)
/// batch. Runs are grouped by `run_index`; only labeled records are scored
/// and every run must cover the same labeled items.
pub fn build_report(
    records: &[DecisionRecord],
    bucket_of: impl Fn(&str) -> Option<SizeBucket>,
) -> Result<EvalReport, ReportError> {
    let first = records.first().ok_or(ReportError::Empty("no decisions"))?;
    let mut runs: BTreeMap<u32, Vec<&DecisionRecord>> = BTreeMap::new();
    for r in records {
        runs.entry(r.run_index).or_default().push(r);
    }

    let mut per_run = Vec::new();
    let mut reference: Option<(u32, BTreeSet<(&str, &str)>)> = None;
    for (&run, recs) in &runs {
        let labeled: Vec<_> = recs
            .iter()
            .filter_map(|r| r.human_label.map(|h| (*r, h)))
            .collect();
        if labeled.is_empty() {
            continue;
        }
        let keys: BTreeSet<_> = labeled
            .iter()
            .map(|(r, _)| (r.sample_id.as_str(), r.generator.as_str()))
            .collect();
        match &reference {
            None => reference = Some((run, keys)),
            Some((r0, k0)) if *k0 != keys => return Err(ReportError::MismatchedRuns(run, *r0)),
            _ => {}
        }
        per_run.push(score_labels(labeled.iter().map(|(r, h)| (r.label, *h))));
    }

    let size_breakdown = misjudgment_by_size(records.iter().filter_map(|r| {
        let h = r.human_label?;
        Some((r.label, h, bucket_of(&r.sample_id)?))
    }));

    Ok(EvalReport {
        method: first.method,
        scenario: first.scenario,
        judge_model: first.judge_model.clone(),
        scores: aggregate_runs(&per_run),
        call_fraction_saved: call_savings(records.iter().map(|r| &r.provenance)).unwrap_or(0.0),
        size_breakdown,
        parse_failure_count: records.iter().filter(|r| r.parse_failure).count(),
        n_decisions: records.len(),
        generator_ranking: rank_generators(records.iter().map(|r| (r.generator.as_str(), r.label))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Markdown),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn with_std(mean: f64, std: f64, n_runs: usize) -> String {
    if n_runs > 1 {
        format!("{} ± {}", pct(mean), pct(std))
    } else {
        pct(mean)
    }
}

pub const CSV_HEADER: &str = "method,scenario,judge_model,class,recall,recall_std,precision,precision_std,f1,f1_std,accuracy,accuracy_std,n_runs,call_fraction_saved,parse_failures";

pub fn render_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let judge = r.judge_model.as_deref().unwrap_or("");
        let Some(s) = &r.scores else {
            let _ = writeln!(
                out,
                "{},{},{},,,,,,,,,,0,{},{}",
                r.method, r.scenario, judge, r.call_fraction_saved, r.parse_failure_count
            );
            continue;
        };
        let (m, sd) = (&s.mean, &s.std);
        let rows = [
            (
                "macro",
                m.macro_recall,
                sd.macro_recall,
                m.macro_precision,
                sd.macro_precision,
                m.macro_f1,
                sd.macro_f1,
            ),
            (
                "0",
                m.class0.recall,
                sd.class0.recall,
                m.class0.precision,
                sd.class0.precision,
                m.class0.f1,
                sd.class0.f1,
            ),
            (
                "1",
                m.class1.recall,
                sd.class1.recall,
                m.class1.precision,
                sd.class1.precision,
                m.class1.f1,
                sd.class1.f1,
            ),
        ];
        for (class, r_, rs, p, ps, f, fs) in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.scenario,
                judge,
                class,
                r_,
                rs,
                p,
                ps,
                f,
                fs,
                m.accuracy,
                sd.accuracy,
                s.n_runs,
                r.call_fraction_saved,
                r.parse_failure_count
            );
        }
    }
    out
}

/// Macro F1 with per-class F1 beneath it, one column group per report,
/// values in percent with `±` std when more than one run was scored.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str("| Scenario | Method | Judge | Macro F1 | C0 F1 | C1 F1 | Macro R | Macro P | Accuracy | Runs | LLM calls saved | Parse failures |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in reports {
        let judge = r.judge_model.as_deref().unwrap_or("-");
        let cells = match &r.scores {
            Some(s) => {
                let n = s.n_runs;
                [
                    with_std(s.mean.macro_f1, s.std.macro_f1, n),
                    with_std(s.mean.class0.f1, s.std.class0.f1, n),
                    with_std(s.mean.class1.f1, s.std.class1.f1, n),
                    with_std(s.mean.macro_recall, s.std.macro_recall, n),
                    with_std(s.mean.macro_precision, s.std.macro_precision, n),
                    with_std(s.mean.accuracy, s.std.accuracy, n),
                    n.to_string(),
                ]
            }
            None => std::array::from_fn(|_| "n/a".to_string()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {}% | {} |",
            r.scenario,
            r.method,
            judge,
            cells.join(" | "),
            pct(r.call_fraction_saved),
            r.parse_failure_count
        );
    }
    for r in reports.iter().filter(|r| r.size_breakdown.total_errors > 0) {
        let _ = writeln!(
            out,
            "\nMisjudged by result size ({} / {}, {} errors):\n",
            r.scenario, r.method, r.size_breakdown.total_errors
        );
        out.push_str("| Result size | Count | Share |\n|---|---|---|\n");
        for (b, share) in &r.size_breakdown.buckets {
            let _ = writeln!(
                out,
                "| {} | {} | {:.2}% |",
                b.label(),
                share.count,
                share.percent
            );
        }
    }
    for r in reports.iter().filter(|r| !r.generator_ranking.is_empty()) {
        let _ = writeln!(
            out,
            "\nGenerators judged correct ({} / {}):\n",
            r.scenario, r.method
        );
        out.push_str("| Generator | Accuracy |\n|---|---|\n");
        for (g, acc) in &r.generator_ranking {
            let _ = writeln!(out, "| {g} | {acc:.2} |");
        }
    }
    out
}

pub fn render(reports: &[EvalReport], format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        Format::Csv => render_csv(reports),
        Format::Markdown => render_markdown(reports),
    }
}

pub fn emit_report(reports: &[EvalReport], format: Format, path: &Path) -> Result<(), ReportError> {
    fs::write(path, render(reports, format)).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// One cell of a judge-model / temperature sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub model: String,
    pub temperature: f64,
    pub method: Method,
    pub scenario: Scenario,
    pub macro_f1: Option<f64>,
    pub macro_f1_std: Option<f64>,
    pub error: Option<String>,
}

fn sweep_columns(cells: &[SweepCell]) -> Vec<(Scenario, Method, String)> {
    let mut cols: Vec<(Scenario, Method, String)> = Vec::new();
    for c in cells {
        let key = (c.scenario, c.method, format!("{}", c.temperature));
        if !cols.contains(&key) {
            cols.push(key);
        }
    }
    cols
}

/// Rows are judge models, columns (scenario, method, temperature). Failed
/// cells show `ERR`.
pub fn render_sweep_markdown(cells: &[SweepCell]) -> String {
    let cols = sweep_columns(cells);
    let mut models: Vec<&str> = Vec::new();
    for c in cells {
        if !models.contains(&c.model.as_str()) {
            models.push(&c.model);
        }
    }
    let mut out = String::from("| Model |");
    for (s, m, t) in &cols {
        let _ = write!(out, " {s} {m} T={t} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(cols.len()));
    out.push('\n');
    for model in models {
        let _ = write!(out, "| {model} |");
        for (s, m, t) in &cols {
            let cell = cells.iter().find(|c| {
                c.model == model
                    && c.scenario == *s
                    && c.method == *m
                    && format!("{}", c.temperature) == *t
            });
            let text = match cell {
                Some(SweepCell {
                    macro_f1: Some(f),
                    macro_f1_std,
                    ..
                }) => match macro_f1_std {
                    Some(sd) => format!("{} ± {}", pct(*f), pct(*sd)),
                    None => pct(*f),
                },
                Some(_) => "ERR".to_string(),
                None => "".to_string(),
            };
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
    out
}

pub fn render_sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from("model,temperature,method,scenario,macro_f1,macro_f1_std,error\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.model,
            c.temperature,
            c.method,
            c.scenario,
            c.macro_f1
                .map(|v| v.to_string())
                .unwrap_or_else(|| "ERR".into()),
            c.macro_f1_std.map(|v| v.to_string()).unwrap_or_default(),
            c.error.as_deref().unwrap_or("").replace([',', '\n'], " ")
        );
    }
    out
}
