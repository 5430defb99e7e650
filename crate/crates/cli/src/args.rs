use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlr_eval::cascade::BandObjective;
use nlr_eval::corpus::{SizeBucket, Split};
use nlr_eval::{Method, MetricKind, Scenario};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "nlr-eval",
    version,
    about = "Evaluate natural-language renderings of SQL result tables"
)]
pub struct Cli {
    /// TOML config file.
    #[arg(long, global = true, env = "NLR_EVAL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Overrides `workers` from the config.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Overrides `cache_dir` from the config.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics and stratified sampling.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Generate candidate NLRs for every sample.
    Generate(GenerateArgs),
    /// Score candidates with lexical or external metrics.
    ScoreMetrics(ScoreArgs),
    /// Calibrate a single threshold or a confident band on the dev split.
    Calibrate(CalibrateArgs),
    /// LLM judge runs.
    #[command(subcommand)]
    Judge(JudgeCmd),
    /// Run one method on the test split and write decisions and reports.
    Evaluate(EvaluateArgs),
    /// Rebuild reports from decisions files.
    Report(ReportArgs),
    /// Macro F1 across judge models, temperatures, methods and scenarios.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    Stats(StatsArgs),
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Dev,
    Test,
    All,
}

impl SplitArg {
    pub fn admits(self, split: Split) -> bool {
        match self {
            SplitArg::Dev => split == Split::Dev,
            SplitArg::Test => split == Split::Test,
            SplitArg::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StatsFormat {
    Json,
    Markdown,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Only report this bucket (exact2, small, medium, large).
    #[arg(long)]
    pub bucket: Option<SizeBucket>,
    #[arg(long, value_enum, default_value_t = StatsFormat::Json)]
    pub format: StatsFormat,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub per_bucket: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output corpus directory (samples.jsonl plus matching candidates.jsonl).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Endpoint name from the config, or `stub:<mode>`.
    #[arg(long)]
    pub model: String,
    /// Generator label written to each candidate; defaults to the model.
    #[arg(long)]
    pub generator: Option<String>,
    /// Split assigned to the generated candidates.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub scenario: Scenario,
    /// Repeatable; defaults to every built-in metric.
    #[arg(long = "metric")]
    pub metrics: Vec<MetricKind>,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    /// Long-format CSV: one row per (candidate, metric).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-class medians as CSV.
    #[arg(long)]
    pub medians: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    Single,
    Band,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArg {
    FullPipeline,
    ConfidentOnly,
}

impl From<ObjectiveArg> for BandObjective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::FullPipeline => BandObjective::FullPipeline,
            ObjectiveArg::ConfidentOnly => BandObjective::ConfidentOnly,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long, value_enum)]
    pub method: CalibrationKind,
    #[arg(long, default_value_t = MetricKind::DEFAULT)]
    pub metric: MetricKind,
    #[arg(long)]
    pub scenario: Scenario,
    /// Corpus directory; only dev-split candidates are used.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub grid_step: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::FullPipeline)]
    pub objective: ObjectiveArg,
    /// Judge verdicts on the dev split (from `judge run`).
    #[arg(long, conflicts_with = "model")]
    pub verdicts: Option<PathBuf>,
    /// Judge to query for dev verdicts when no verdicts file is given.
    #[arg(long)]
    pub model: Option<String>,
    /// Which judge run to use from the verdicts file.
    #[arg(long, default_value_t = 0)]
    pub run_index: u32,
    /// Thresholds file to create or update.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum JudgeCmd {
    Run(JudgeRunArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct JudgeRunArgs {
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub split: SplitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub scenario: Scenario,
    #[arg(long, default_value_t = MetricKind::DEFAULT)]
    pub metric: MetricKind,
    /// Thresholds file, or `published`.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Corpus directory; only test-split candidates are used.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Json,
    Csv,
    Markdown,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub decisions: Vec<PathBuf>,
    /// Corpus directory, for the result-size breakdown.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Markdown)]
    pub format: FormatArg,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.5, 1.0])]
    pub temperatures: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [Method::Llm, Method::Combo])]
    pub methods: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_values_t = [Scenario::Gt, Scenario::Uqdb])]
    pub scenarios: Vec<Scenario>,
    #[arg(long, default_value_t = MetricKind::DEFAULT)]
    pub metric: MetricKind,
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub runs: u32,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
