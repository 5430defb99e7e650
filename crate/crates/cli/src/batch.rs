//! `generate`, `score-metrics` and `judge run`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Result};
use log::{info, warn};
use nlr_eval::corpus::{CandidateNlr, Split};
use nlr_eval::judge::{InferenceParams, ParseStatus};
use nlr_eval::metrics::{self, MetricKind};
use nlr_eval::{JudgeClient, Scenario};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{GenerateArgs, JudgeRunArgs, ScoreArgs, SplitArg};
use crate::context::{csv_field, usage, write_file, Ctx};
use crate::pipeline::{self, Item};

pub fn params_with(ctx: &Ctx, temperature: Option<f64>) -> Result<InferenceParams> {
    let mut params = ctx.config.params.clone();
    if let Some(t) = temperature {
        params.temperature = t;
    }
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct Failure<'a> {
    sample_id: &'a str,
    error: String,
}

pub fn generate(ctx: &Ctx, args: &GenerateArgs) -> Result<bool> {
    let split = match args.split {
        SplitArg::Dev => Split::Dev,
        SplitArg::Test => Split::Test,
        SplitArg::All => return Err(usage("generate needs --split dev or --split test")),
    };
    let params = params_with(ctx, args.temperature)?;
    let client = ctx.config.build_client(&args.model)?;
    let corpus = ctx.load_corpus(&args.input)?;
    let generator = args.generator.clone().unwrap_or_else(|| args.model.clone());

    let results: Vec<_> = ctx.pool()?.install(|| {
        corpus
            .samples()
            .par_iter()
            .map(|s| (s, client.generate_nlr(&params, &s.question, &s.table)))
            .collect()
    });

    let mut candidates = Vec::new();
    let mut failed = String::new();
    for (sample, res) in results {
        match res {
            Ok(g) => candidates.push(CandidateNlr {
                sample_id: sample.id.clone(),
                generator: generator.clone(),
                text: g.text,
                human_label: None,
                split,
                error_reason: None,
            }),
            Err(e) => {
                warn!("{}: generation failed: {e}", sample.id);
                let line = serde_json::to_string(&Failure {
                    sample_id: &sample.id,
                    error: e.to_string(),
                })?;
                let _ = writeln!(failed, "{line}");
            }
        }
    }

    let mut buf = Vec::new();
    nlr_eval::corpus::write_candidates_jsonl(&mut buf, &candidates)?;
    write_file(&args.out, &buf)?;
    let mut failed_path = args.out.clone().into_os_string();
    failed_path.push(".failed.jsonl");
    write_file(failed_path.as_ref(), failed.as_bytes())?;
    ctx.provenance("generate", args, Some(&args.input), None)?
        .with_params(&params)
        .write_beside(&args.out)?;

    let n_failed = corpus.len() - candidates.len();
    eprintln!(
        "generated {} candidates, {} failed",
        candidates.len(),
        n_failed
    );
    Ok(n_failed == 0)
}

pub fn score_metrics(ctx: &Ctx, args: &ScoreArgs) -> Result<()> {
    let corpus = ctx.load_corpus(&args.input)?;
    let kinds = if args.metrics.is_empty() {
        MetricKind::builtins()
    } else {
        args.metrics.clone()
    };
    let registry = ctx.config.build_registry()?;
    let items = pipeline::items(&corpus, args.scenario, &ctx.config.uqdb_template, |c| {
        args.split.admits(c.split)
    })?;
    if items.is_empty() {
        bail!(nlr_eval::report::ReportError::Empty(
            "no candidates in the selected split"
        ));
    }
    let pool = ctx.pool()?;

    let mut table = String::from("sample_id,generator,split,human_label,metric,value\n");
    let mut medians =
        String::from("metric,scenario,n_class0,n_class1,median_class0,median_class1,difference\n");
    for kind in &kinds {
        let values = pipeline::metric_values(&pool, &items, kind, &registry)?;
        for (it, v) in items.iter().zip(&values) {
            let _ = writeln!(
                table,
                "{},{},{},{},{kind},{v}",
                csv_field(&it.cand.sample_id),
                csv_field(&it.cand.generator),
                split_name(it.cand.split),
                it.cand
                    .human_label
                    .map(|h| h.to_string())
                    .unwrap_or_default(),
            );
        }
        let labeled: Vec<(f64, u8)> = items
            .iter()
            .zip(&values)
            .filter_map(|(it, v)| it.cand.human_label.map(|h| (*v, h)))
            .collect();
        match metrics::class_medians(&labeled) {
            Ok(m) => {
                let n1 = labeled.iter().filter(|(_, h)| *h == 1).count();
                let _ = writeln!(
                    medians,
                    "{kind},{},{},{n1},{},{},{}",
                    args.scenario,
                    labeled.len() - n1,
                    m.class0,
                    m.class1,
                    m.difference
                );
            }
            Err(e) => warn!("{kind}: no class medians: {e}"),
        }
    }
    write_file(&args.out, table.as_bytes())?;
    let prov = ctx.provenance("score-metrics", args, Some(&args.input), None)?;
    prov.write_beside(&args.out)?;
    if let Some(path) = &args.medians {
        write_file(path, medians.as_bytes())?;
        prov.write_beside(path)?;
    }
    info!(
        "scored {} candidates with {} metrics",
        items.len(),
        kinds.len()
    );
    Ok(())
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Dev => "dev",
        Split::Test => "test",
    }
}

/// One line of `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub sample_id: String,
    pub generator: String,
    pub scenario: Scenario,
    pub judge_model: String,
    pub run_index: u32,
    pub temperature: f64,
    pub label: u8,
    pub verdict: Option<bool>,
    pub parse_status: ParseStatus,
    pub reasked: bool,
    pub raw_text: String,
    pub human_label: Option<u8>,
}

pub fn judge_runs(
    ctx: &Ctx,
    client: &JudgeClient,
    params: &InferenceParams,
    items: &[Item],
    scenario: Scenario,
    runs: u32,
) -> Result<Vec<VerdictRecord>> {
    let jobs: Vec<(u32, usize)> = (0..runs)
        .flat_map(|r| (0..items.len()).map(move |i| (r, i)))
        .collect();
    let out: Result<Vec<_>, _> = ctx.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(r, i)| {
                let it = &items[i];
                pipeline::judge_item(client, params, it, r).map(|v| VerdictRecord {
                    sample_id: it.cand.sample_id.clone(),
                    generator: it.cand.generator.clone(),
                    scenario,
                    judge_model: client.name().to_string(),
                    run_index: r,
                    temperature: params.temperature,
                    label: v.label(),
                    verdict: v.verdict,
                    parse_status: v.parse_status,
                    reasked: v.reasked,
                    raw_text: v.raw_text,
                    human_label: it.cand.human_label,
                })
            })
            .collect()
    });
    Ok(out?)
}

pub fn judge_run(ctx: &Ctx, args: &JudgeRunArgs) -> Result<()> {
    if args.runs == 0 {
        return Err(usage("--runs must be at least 1"));
    }
    let params = params_with(ctx, args.temperature)?;
    let client = ctx.config.build_client(&args.model)?;
    let corpus = ctx.load_corpus(&args.input)?;
    let items = pipeline::items(&corpus, args.scenario, &ctx.config.uqdb_template, |c| {
        args.split.admits(c.split)
    })?;
    let records = judge_runs(ctx, &client, &params, &items, args.scenario, args.runs)?;

    let mut buf = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_file(&args.out, &buf)?;
    ctx.provenance("judge run", args, Some(&args.input), None)?
        .with_params(&params)
        .write_beside(&args.out)?;

    let failures = records
        .iter()
        .filter(|r| r.parse_status != ParseStatus::Parsed)
        .count();
    let mut per_run: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for r in &records {
        let e = per_run.entry(r.run_index).or_default();
        e.0 += usize::from(r.label == 1);
        e.1 += 1;
    }
    for (run, (pos, n)) in per_run {
        eprintln!("run {run}: {pos}/{n} judged correct");
    }
    if failures > 0 {
        warn!("{failures} verdicts could not be parsed and were labeled 0");
    }
    Ok(())
}

pub fn read_verdicts(path: &std::path::Path) -> Result<Vec<VerdictRecord>> {
    use anyhow::Context as _;
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                anyhow::Error::new(nlr_eval::report::ReportError::Read {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}
