//! `evaluate`, `report` and `sweep`.

use std::collections::BTreeMap;

use anyhow::{Context as _, Result};
use log::{error, warn};
use nlr_eval::cascade::{BandEntry, SingleEntry, ThresholdFile};
use nlr_eval::corpus::{Corpus, Split};
use nlr_eval::judge::InferenceParams;
use nlr_eval::metrics::ScorerRegistry;
use nlr_eval::report::{self, DecisionRecord, EvalReport, Format, SweepCell};
use nlr_eval::{JudgeClient, Method, MetricKind, Scenario};
use rayon::ThreadPool;

use crate::args::{EvaluateArgs, FormatArg, ReportArgs, SweepArgs};
use crate::batch::params_with;
use crate::context::{emit, load_thresholds, usage, write_file, Ctx};
use crate::pipeline::{self, MethodRun};

/// Thresholds a method needs, looked up before any judge call.
enum Rule {
    None,
    Single(SingleEntry),
    Band(BandEntry),
}

impl Rule {
    fn lookup(
        method: Method,
        file: Option<&ThresholdFile>,
        metric: &MetricKind,
        scenario: Scenario,
    ) -> Result<Rule> {
        if method == Method::Llm {
            return Ok(Rule::None);
        }
        let file = file.ok_or_else(|| usage(format!("method {method} needs --thresholds")))?;
        Ok(match method {
            Method::Metrics => Rule::Single(file.single_for(metric, scenario)?.clone()),
            _ => Rule::Band(file.band_for(metric, scenario)?.clone()),
        })
    }

    fn provenance(&self) -> Option<serde_json::Value> {
        match self {
            Rule::None => None,
            Rule::Single(e) => serde_json::to_value(e).ok(),
            Rule::Band(e) => serde_json::to_value(e).ok(),
        }
    }
}

struct Prepared<'a> {
    items: Vec<pipeline::Item<'a>>,
    scores: Vec<f64>,
}

fn prepare<'a>(
    ctx: &Ctx,
    pool: &ThreadPool,
    corpus: &'a Corpus,
    scenario: Scenario,
    metric: &MetricKind,
    registry: &ScorerRegistry,
) -> Result<Prepared<'a>> {
    let items = pipeline::items(corpus, scenario, &ctx.config.uqdb_template, |c| {
        c.split == Split::Test
    })?;
    if items.is_empty() {
        return Err(report::ReportError::Empty("no test-split candidates").into());
    }
    let scores = pipeline::metric_values(pool, &items, metric, registry)?;
    Ok(Prepared { items, scores })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    pool: &ThreadPool,
    prep: &Prepared,
    method: Method,
    scenario: Scenario,
    rule: &Rule,
    judge: Option<&JudgeClient>,
    params: &InferenceParams,
    runs: u32,
) -> Result<Vec<DecisionRecord>> {
    let (single, band) = match rule {
        Rule::None => (None, None),
        Rule::Single(e) => (Some(&e.threshold), None),
        Rule::Band(e) => (None, Some(&e.band)),
    };
    let run = MethodRun {
        method,
        scenario,
        single,
        band,
        judge,
        params,
        runs: if method == Method::Metrics { 1 } else { runs },
    };
    pipeline::decide_all(pool, &prep.items, &prep.scores, &run)
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let thresholds = args
        .thresholds
        .as_deref()
        .map(load_thresholds)
        .transpose()?;
    let rule = Rule::lookup(
        args.method,
        thresholds.as_ref(),
        &args.metric,
        args.scenario,
    )?;
    let params = params_with(ctx, args.temperature)?;
    let client = if args.method.uses_judge() {
        let model = args
            .model
            .as_deref()
            .ok_or_else(|| usage(format!("method {} needs --model", args.method)))?;
        Some(ctx.config.build_client(model)?)
    } else {
        None
    };
    if args.method == Method::Metrics && args.runs > 1 {
        warn!(
            "metrics-as-a-judge is deterministic; running once instead of {} times",
            args.runs
        );
    }

    let corpus = ctx.load_corpus(&args.input)?;
    let registry = ctx.config.build_registry()?;
    let pool = ctx.pool()?;
    let prep = prepare(ctx, &pool, &corpus, args.scenario, &args.metric, &registry)?;
    let records = run_cell(
        &pool,
        &prep,
        args.method,
        args.scenario,
        &rule,
        client.as_ref(),
        &params,
        args.runs,
    )?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut buf = Vec::new();
    report::write_decisions(&mut buf, &records)?;
    write_file(&args.out.join("decisions.jsonl"), &buf)?;

    let rep = pipeline::build_report(&corpus, &records)?;
    if rep.scores.is_none() {
        warn!("no human labels in the test split; scoring skipped, decisions still written");
    }
    let reports = [rep];
    for format in [Format::Json, Format::Csv, Format::Markdown] {
        report::emit_report(
            &reports,
            format,
            &args.out.join(format!("report.{}", format.extension())),
        )?;
    }
    ctx.provenance("evaluate", args, Some(&args.input), rule.provenance())?
        .with_params(&params)
        .write(&args.out.join("provenance.json"))?;
    print!("{}", report::render_markdown(&reports));
    Ok(())
}

pub fn report(ctx: &Ctx, args: &ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.decisions {
        records.extend(report::read_decisions(path)?);
    }
    let corpus = args
        .input
        .as_deref()
        .map(|p| ctx.load_corpus(p))
        .transpose()?;
    let mut groups: BTreeMap<(Scenario, Method, Option<String>), Vec<DecisionRecord>> =
        BTreeMap::new();
    for r in records {
        groups
            .entry((r.scenario, r.method, r.judge_model.clone()))
            .or_default()
            .push(r);
    }
    let reports: Vec<EvalReport> = groups
        .values()
        .map(|recs| {
            report::build_report(recs, |id| {
                corpus
                    .as_ref()
                    .and_then(|c| c.sample(id))
                    .and_then(|s| s.bucket().ok())
            })
        })
        .collect::<Result<_, _>>()?;
    let format = match args.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
        FormatArg::Markdown => Format::Markdown,
    };
    emit(args.out.as_ref(), &report::render(&reports, format))?;
    if let Some(out) = &args.out {
        ctx.provenance("report", args, args.input.as_deref(), None)?
            .write_beside(out)?;
    }
    Ok(())
}

pub fn sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let thresholds = args
        .thresholds
        .as_deref()
        .map(load_thresholds)
        .transpose()?;
    let corpus = ctx.load_corpus(&args.input)?;
    let registry = ctx.config.build_registry()?;
    let pool = ctx.pool()?;

    let mut prepared = BTreeMap::new();
    for &scenario in &args.scenarios {
        prepared.insert(
            scenario,
            prepare(ctx, &pool, &corpus, scenario, &args.metric, &registry)?,
        );
    }
    let clients: Vec<Result<JudgeClient, String>> = args
        .models
        .iter()
        .map(|m| ctx.config.build_client(m).map_err(|e| e.to_string()))
        .collect();

    let mut cells = Vec::new();
    for (model, client) in args.models.iter().zip(&clients) {
        for &temperature in &args.temperatures {
            for &method in &args.methods {
                for &scenario in &args.scenarios {
                    let result = (|| -> Result<EvalReport> {
                        let client = match client {
                            Ok(c) => c,
                            Err(e) => anyhow::bail!("{e}"),
                        };
                        let rule =
                            Rule::lookup(method, thresholds.as_ref(), &args.metric, scenario)?;
                        let params = params_with(ctx, Some(temperature))?;
                        let prep = &prepared[&scenario];
                        let records = run_cell(
                            &pool,
                            prep,
                            method,
                            scenario,
                            &rule,
                            Some(client),
                            &params,
                            args.runs,
                        )?;
                        pipeline::build_report(&corpus, &records)
                    })();
                    let mut cell = SweepCell {
                        model: model.clone(),
                        temperature,
                        method,
                        scenario,
                        macro_f1: None,
                        macro_f1_std: None,
                        error: None,
                    };
                    match result {
                        Ok(EvalReport {
                            scores: Some(agg), ..
                        }) => {
                            cell.macro_f1 = Some(agg.mean.macro_f1);
                            cell.macro_f1_std = (agg.n_runs > 1).then_some(agg.std.macro_f1);
                        }
                        Ok(_) => cell.error = Some("no human labels".into()),
                        Err(e) => {
                            error!("sweep cell {model} T={temperature} {method} {scenario}: {e:#}");
                            cell.error = Some(format!("{e:#}"));
                        }
                    }
                    cells.push(cell);
                }
            }
        }
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let md = report::render_sweep_markdown(&cells);
    write_file(&args.out.join("sweep.md"), md.as_bytes())?;
    write_file(
        &args.out.join("sweep.csv"),
        report::render_sweep_csv(&cells).as_bytes(),
    )?;
    let thr = thresholds
        .as_ref()
        .and_then(|t| serde_json::to_value(t).ok());
    ctx.provenance("sweep", args, Some(&args.input), thr)?
        .write(&args.out.join("provenance.json"))?;
    print!("{md}");
    Ok(())
}
