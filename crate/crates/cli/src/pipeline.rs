//! Shared scoring and decision steps for `evaluate`, `calibrate` and `sweep`.

use anyhow::Result;
use nlr_eval::cascade::{self, SingleThreshold};
use nlr_eval::corpus::{build_reference_with, CandidateNlr, Corpus, Sample};
use nlr_eval::judge::{InferenceParams, JudgeError, JudgeVerdict};
use nlr_eval::metrics::{self, ScorerRegistry};
use nlr_eval::report::{self, DecisionRecord, EvalReport};
use nlr_eval::{JudgeClient, Method, MetricKind, Scenario, ThresholdBand};
use rayon::prelude::*;
use rayon::ThreadPool;

/// A candidate with its sample and the reference it is judged against.
pub struct Item<'a> {
    pub cand: &'a CandidateNlr,
    pub sample: &'a Sample,
    pub reference: String,
}

pub fn items<'a>(
    corpus: &'a Corpus,
    scenario: Scenario,
    template: &str,
    keep: impl Fn(&CandidateNlr) -> bool,
) -> Result<Vec<Item<'a>>> {
    corpus
        .candidates()
        .iter()
        .filter(|c| keep(c))
        .map(|cand| {
            let sample = corpus
                .sample(&cand.sample_id)
                .expect("candidates reference loaded samples");
            Ok(Item {
                cand,
                sample,
                reference: build_reference_with(sample, scenario, template)?,
            })
        })
        .collect()
}

pub fn metric_values(
    pool: &ThreadPool,
    items: &[Item],
    kind: &MetricKind,
    registry: &ScorerRegistry,
) -> Result<Vec<f64>> {
    pool.install(|| {
        items
            .par_iter()
            .map(|it| Ok(metrics::score(kind, &it.cand.text, &it.reference, registry)?.value))
            .collect()
    })
}

pub fn judge_item(
    judge: &JudgeClient,
    params: &InferenceParams,
    item: &Item,
    run_index: u32,
) -> Result<JudgeVerdict, JudgeError> {
    judge.judge(
        params,
        &item.sample.question,
        &item.reference,
        &item.cand.text,
        run_index,
    )
}

pub struct MethodRun<'a> {
    pub method: Method,
    pub scenario: Scenario,
    pub single: Option<&'a SingleThreshold>,
    pub band: Option<&'a ThresholdBand>,
    pub judge: Option<&'a JudgeClient>,
    pub params: &'a InferenceParams,
    pub runs: u32,
}

/// Decides every item for every run. Output order is run-major, then item
/// order, whatever the worker scheduling.
pub fn decide_all(
    pool: &ThreadPool,
    items: &[Item],
    scores: &[f64],
    run: &MethodRun,
) -> Result<Vec<DecisionRecord>> {
    let jobs: Vec<(u32, usize)> = (0..run.runs)
        .flat_map(|r| (0..items.len()).map(move |i| (r, i)))
        .collect();
    let judge_model = if run.method.uses_judge() {
        run.judge.map(|j| j.name().to_string())
    } else {
        None
    };
    let records: Result<Vec<_>, JudgeError> = pool.install(|| {
        jobs.par_iter()
            .map(|&(r, i)| {
                let item = &items[i];
                let score = scores[i];
                let ask = || judge_item(run.judge.expect("judge checked"), run.params, item, r);
                let decision = match run.method {
                    Method::Metrics => {
                        cascade::metrics_judge(score, run.single.expect("threshold checked"))
                    }
                    Method::Llm => cascade::llm_judge_method(score, ask)?,
                    Method::Combo => {
                        cascade::combo_decide(score, run.band.expect("band checked"), ask)?
                    }
                };
                Ok(DecisionRecord {
                    sample_id: item.cand.sample_id.clone(),
                    generator: item.cand.generator.clone(),
                    scenario: run.scenario,
                    method: run.method,
                    judge_model: judge_model.clone(),
                    run_index: r,
                    metric_value: score,
                    label: decision.label,
                    provenance: decision.provenance,
                    human_label: item.cand.human_label,
                    parse_failure: decision.is_parse_failure(),
                })
            })
            .collect()
    });
    Ok(records?)
}

pub fn build_report(corpus: &Corpus, records: &[DecisionRecord]) -> Result<EvalReport> {
    Ok(report::build_report(records, |id| {
        corpus.sample(id).and_then(|s| s.bucket().ok())
    })?)
}
