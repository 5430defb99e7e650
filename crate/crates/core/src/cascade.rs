//! The three judgment methods and threshold calibration.
//!
//! * Metrics-as-a-judge: `score > threshold` means class 1.
//! * LLM-as-a-judge: the judge's verdict is the class.
//! * Combo: scores inside a confident band are decided by the band; every
//!   other score is deferred to the judge. Interval edges are half-open,
//!   `lower < score <= upper`, so with `th_0l = 0` a score of exactly 0 is
//!   deferred.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Scenario;
use crate::judge::JudgeVerdict;
use crate::metrics::{MetricKind, Variant};
use crate::report::{ConfusionCounts, F1Sum};

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("threshold {0} outside [0, 1]")]
    ThresholdRange(f64),
    #[error("band thresholds must satisfy 0 <= th_0l <= th_0u <= th_1l <= th_1u <= 1, got {0:?}")]
    BandOrder([f64; 4]),
    #[error("grid step {0} outside (0, 0.5]")]
    GridStep(f64),
    #[error("dev set is empty")]
    EmptyDev,
    #[error("dev set needs both classes; only class {0} present")]
    SingleClass(u8),
    #[error("dev item {0} has no judge verdict")]
    MissingVerdict(usize),
    #[error("human label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("no {kind} threshold for {metric} / {scenario}")]
    NotFound {
        kind: &'static str,
        metric: MetricKind,
        scenario: Scenario,
    },
    #[error("thresholds file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Metrics,
    Llm,
    Combo,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Metrics, Method::Llm, Method::Combo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Metrics => "metrics",
            Method::Llm => "llm",
            Method::Combo => "combo",
        }
    }

    /// Whether the method ever calls the judge.
    pub fn uses_judge(self) -> bool {
        self != Method::Metrics
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected metrics, llm or combo)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleThreshold {
    pub metric: MetricKind,
    pub scenario: Scenario,
    pub value: f64,
}

impl SingleThreshold {
    pub fn new(metric: MetricKind, scenario: Scenario, value: f64) -> Result<Self, CascadeError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(CascadeError::ThresholdRange(value));
        }
        Ok(Self {
            metric,
            scenario,
            value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdBand {
    pub metric: MetricKind,
    pub scenario: Scenario,
    pub th_0l: f64,
    pub th_0u: f64,
    pub th_1l: f64,
    pub th_1u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Class0,
    Class1,
    Pending,
}

impl ThresholdBand {
    pub fn new(metric: MetricKind, scenario: Scenario, th: [f64; 4]) -> Result<Self, CascadeError> {
        let ordered = th.iter().all(|t| t.is_finite())
            && 0.0 <= th[0]
            && th[0] <= th[1]
            && th[1] <= th[2]
            && th[2] <= th[3]
            && th[3] <= 1.0;
        if !ordered {
            return Err(CascadeError::BandOrder(th));
        }
        Ok(Self {
            metric,
            scenario,
            th_0l: th[0],
            th_0u: th[1],
            th_1l: th[2],
            th_1u: th[3],
        })
    }

    /// A band whose confident intervals are empty, so everything is
    /// deferred to the judge.
    pub fn degenerate(
        metric: MetricKind,
        scenario: Scenario,
        low: f64,
        high: f64,
    ) -> Result<Self, CascadeError> {
        Self::new(metric, scenario, [low, low, high, high])
    }

    pub fn thresholds(&self) -> [f64; 4] {
        [self.th_0l, self.th_0u, self.th_1l, self.th_1u]
    }

    pub fn region(&self, score: f64) -> Region {
        if self.th_1l < score && score <= self.th_1u {
            Region::Class1
        } else if self.th_0l < score && score <= self.th_0u {
            Region::Class0
        } else {
            Region::Pending
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BandConfident,
    JudgeDecided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: u8,
    pub provenance: Provenance,
    pub metric_value: f64,
    /// Present exactly when the judge decided.
    pub verdict: Option<JudgeVerdict>,
}

impl Decision {
    fn confident(label: u8, metric_value: f64) -> Self {
        Self {
            label,
            provenance: Provenance::BandConfident,
            metric_value,
            verdict: None,
        }
    }

    fn judged(verdict: JudgeVerdict, metric_value: f64) -> Self {
        Self {
            label: verdict.label(),
            provenance: Provenance::JudgeDecided,
            metric_value,
            verdict: Some(verdict),
        }
    }

    /// The judge answered but no verdict could be parsed; labeled 0.
    pub fn is_parse_failure(&self) -> bool {
        self.verdict
            .as_ref()
            .is_some_and(JudgeVerdict::is_parse_failure)
    }
}

pub fn metrics_judge(score: f64, threshold: &SingleThreshold) -> Decision {
    Decision::confident(u8::from(score > threshold.value), score)
}

/// Decides by band when the score is confident, otherwise calls `judge`
/// exactly once. `judge` is never called for confident scores.
pub fn combo_decide<E>(
    score: f64,
    band: &ThresholdBand,
    judge: impl FnOnce() -> Result<JudgeVerdict, E>,
) -> Result<Decision, E> {
    match band.region(score) {
        Region::Class1 => Ok(Decision::confident(1, score)),
        Region::Class0 => Ok(Decision::confident(0, score)),
        Region::Pending => Ok(Decision::judged(judge()?, score)),
    }
}

/// Always asks the judge. `metric_value` is carried through for reporting.
pub fn llm_judge_method<E>(
    metric_value: f64,
    judge: impl FnOnce() -> Result<JudgeVerdict, E>,
) -> Result<Decision, E> {
    Ok(Decision::judged(judge()?, metric_value))
}

/// Thresholds `0, step, 2*step, ..., 1`. When `1/step` is (nearly) an
/// integer `n`, points are computed as `i/n` so that e.g. 0.45 at step 0.01
/// is the nearest double to 0.45.
pub fn grid_points(step: f64) -> Result<Vec<f64>, CascadeError> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(CascadeError::GridStep(step));
    }
    let inv = 1.0 / step;
    let n = inv.round();
    if (inv - n).abs() < 1e-9 {
        let n = n as usize;
        return Ok((0..=n).map(|i| i as f64 / n as f64).collect());
    }
    let mut pts: Vec<f64> = (0..)
        .map(|i| i as f64 * step)
        .take_while(|&t| t <= 1.0)
        .collect();
    if pts.last().is_some_and(|&t| t < 1.0) {
        pts.push(1.0);
    }
    Ok(pts)
}

fn check_classes(labels: impl Iterator<Item = u8>) -> Result<(), CascadeError> {
    let mut seen = [false; 2];
    let mut any = false;
    for l in labels {
        if l > 1 {
            return Err(CascadeError::BadLabel(l));
        }
        seen[l as usize] = true;
        any = true;
    }
    match (any, seen) {
        (false, _) => Err(CascadeError::EmptyDev),
        (true, [true, true]) => Ok(()),
        (true, [true, false]) => Err(CascadeError::SingleClass(0)),
        _ => Err(CascadeError::SingleClass(1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleCalibration {
    pub value: f64,
    pub macro_f1: f64,
    pub grid_step: f64,
}

/// Grid search for the single threshold with the best dev macro F1. Ties go
/// to the smallest threshold. Scores are compared exactly, so equal macro
/// F1 values never split on rounding.
pub fn calibrate_single(
    dev: &[(f64, u8)],
    grid_step: f64,
) -> Result<SingleCalibration, CascadeError> {
    check_classes(dev.iter().map(|&(_, l)| l))?;
    let grid = grid_points(grid_step)?;
    let mut best: Option<(F1Sum, f64, ConfusionCounts)> = None;
    for &t in &grid {
        let counts = ConfusionCounts::from_pairs(dev.iter().map(|&(s, l)| (u8::from(s > t), l)));
        let f1 = counts.f1_sum();
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, t, counts));
        }
    }
    let (_, value, counts) = best.expect("grid is non-empty");
    Ok(SingleCalibration {
        value,
        macro_f1: counts.scores().macro_f1,
        grid_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandObjective {
    /// Macro F1 of the whole cascade, pending items resolved by their
    /// judge verdicts.
    #[default]
    FullPipeline,
    /// Macro F1 over band-confident items only.
    ConfidentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevItem {
    pub score: f64,
    pub human_label: u8,
    /// Class the judge assigned (parse failures already mapped to 0).
    pub judge_label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCalibration {
    pub thresholds: [f64; 4],
    pub macro_f1: f64,
    pub confident: usize,
    pub pending: usize,
    pub grid_step: f64,
    pub objective: BandObjective,
}

/// Per-bin counts indexed by `[human][judge]`.
type Cell = [[u64; 2]; 2];

fn add(a: Cell, b: Cell) -> Cell {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn sub(a: Cell, b: Cell) -> Cell {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

fn human(c: Cell, h: usize) -> u64 {
    c[h][0] + c[h][1]
}

/// Exhaustive search over ordered threshold tuples on the grid.
///
/// Each score is binned by how many grid points lie strictly below it; a
/// half-open interval `(g_a, g_b]` then covers exactly the bins
/// `a+1..=b`, so prefix sums give every tuple's confusion counts in O(1).
/// Ties: best objective, then most band-confident items, then the
/// lexicographically smallest tuple.
pub fn calibrate_band(
    dev: &[DevItem],
    grid_step: f64,
    objective: BandObjective,
) -> Result<BandCalibration, CascadeError> {
    check_classes(dev.iter().map(|d| d.human_label))?;
    if objective == BandObjective::FullPipeline {
        if let Some(i) = dev.iter().position(|d| d.judge_label.is_none()) {
            return Err(CascadeError::MissingVerdict(i));
        }
    }
    let grid = grid_points(grid_step)?;
    let m = grid.len();
    let mut bins = vec![Cell::default(); m + 1];
    for d in dev {
        let k = grid.partition_point(|&g| g < d.score);
        let j = d.judge_label.unwrap_or(0).min(1) as usize;
        bins[k][d.human_label as usize][j] += 1;
    }
    // prefix[k] = sum of bins[0..k]
    let mut prefix = vec![Cell::default(); m + 2];
    for k in 0..=m {
        prefix[k + 1] = add(prefix[k], bins[k]);
    }
    let total = prefix[m + 1];
    let span = |a: usize, b: usize| sub(prefix[b + 1], prefix[a + 1]);

    let mut best: Option<(F1Sum, u64, [usize; 4], ConfusionCounts)> = None;
    for a in 0..m {
        for b in a..m {
            let c0 = span(a, b);
            for c in b..m {
                for d in c..m {
                    let c1 = span(c, d);
                    let counts = match objective {
                        BandObjective::FullPipeline => {
                            let p = sub(sub(total, c0), c1);
                            ConfusionCounts::new(
                                human(c1, 1) + p[1][1],
                                human(c1, 0) + p[0][1],
                                human(c0, 1) + p[1][0],
                                human(c0, 0) + p[0][0],
                            )
                        }
                        BandObjective::ConfidentOnly => ConfusionCounts::new(
                            human(c1, 1),
                            human(c1, 0),
                            human(c0, 1),
                            human(c0, 0),
                        ),
                    };
                    let coverage = human(c0, 0) + human(c0, 1) + human(c1, 0) + human(c1, 1);
                    let f1 = counts.f1_sum();
                    let better = match &best {
                        None => true,
                        Some((bf, bc, _, _)) => f1 > *bf || (f1 == *bf && coverage > *bc),
                    };
                    if better {
                        best = Some((f1, coverage, [a, b, c, d], counts));
                    }
                }
            }
        }
    }
    let (_, coverage, idx, counts) = best.expect("grid is non-empty");
    Ok(BandCalibration {
        thresholds: idx.map(|i| grid[i]),
        macro_f1: counts.scores().macro_f1,
        confident: coverage as usize,
        pending: dev.len() - coverage as usize,
        grid_step,
        objective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleEntry {
    #[serde(flatten)]
    pub threshold: SingleThreshold,
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub dev_macro_f1: Option<f64>,
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    #[serde(flatten)]
    pub band: ThresholdBand,
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub dev_macro_f1: Option<f64>,
    #[serde(default)]
    pub objective: Option<BandObjective>,
    #[serde(default)]
    pub source: Option<String>,
}

/// Persisted thresholds keyed by (metric, scenario).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    #[serde(default)]
    pub single: Vec<SingleEntry>,
    #[serde(default)]
    pub band: Vec<BandEntry>,
}

impl ThresholdFile {
    pub fn load(path: &Path) -> Result<Self, CascadeError> {
        let err = |message: String| CascadeError::File {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let file: ThresholdFile = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        for s in &file.single {
            SingleThreshold::new(
                s.threshold.metric.clone(),
                s.threshold.scenario,
                s.threshold.value,
            )
            .map_err(|e| err(e.to_string()))?;
        }
        for b in &file.band {
            ThresholdBand::new(b.band.metric.clone(), b.band.scenario, b.band.thresholds())
                .map_err(|e| err(e.to_string()))?;
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), CascadeError> {
        let mut text = serde_json::to_string_pretty(self).expect("thresholds serialize");
        text.push('\n');
        fs::write(path, text).map_err(|e| CascadeError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Inserts or replaces the entry for the same (metric, scenario).
    pub fn upsert_single(&mut self, entry: SingleEntry) {
        let key = (&entry.threshold.metric, entry.threshold.scenario);
        self.single
            .retain(|e| (&e.threshold.metric, e.threshold.scenario) != key);
        self.single.push(entry);
        self.single.sort_by(|a, b| {
            (a.threshold.scenario, &a.threshold.metric)
                .cmp(&(b.threshold.scenario, &b.threshold.metric))
        });
    }

    pub fn upsert_band(&mut self, entry: BandEntry) {
        let key = (&entry.band.metric, entry.band.scenario);
        self.band
            .retain(|e| (&e.band.metric, e.band.scenario) != key);
        self.band.push(entry);
        self.band.sort_by(|a, b| {
            (a.band.scenario, &a.band.metric).cmp(&(b.band.scenario, &b.band.metric))
        });
    }

    pub fn single_for(
        &self,
        metric: &MetricKind,
        scenario: Scenario,
    ) -> Result<&SingleEntry, CascadeError> {
        self.single
            .iter()
            .find(|e| &e.threshold.metric == metric && e.threshold.scenario == scenario)
            .ok_or_else(|| CascadeError::NotFound {
                kind: "single",
                metric: metric.clone(),
                scenario,
            })
    }

    pub fn band_for(
        &self,
        metric: &MetricKind,
        scenario: Scenario,
    ) -> Result<&BandEntry, CascadeError> {
        self.band
            .iter()
            .find(|e| &e.band.metric == metric && e.band.scenario == scenario)
            .ok_or_else(|| CascadeError::NotFound {
                kind: "band",
                metric: metric.clone(),
                scenario,
            })
    }

    /// Published decision thresholds (calibrated on the NLR-BIRD dev split)
    /// for every metric row, plus the ROUGE-1 recall bands.
    pub fn published() -> Self {
        use MetricKind::*;
        use Variant::*;
        let rows: [(MetricKind, f64, f64); 13] = [
            (CosineEmbedding, 0.7, 0.65),
            (External("bertscore-recall".into()), 0.3, 0.3),
            (External("bertscore-precision".into()), 0.7, 0.6),
            (External("bertscore-f1".into()), 0.45, 0.41),
            (Rouge1(Recall), 0.45, 0.4),
            (Rouge1(Precision), 0.8, 0.65),
            (Rouge1(F1), 0.7, 0.5),
            (Rouge2(Recall), 0.4, 0.3),
            (Rouge2(Precision), 0.7, 0.43),
            (Rouge2(F1), 0.45, 0.43),
            (RougeL(Recall), 0.45, 0.4),
            (RougeL(Precision), 0.8, 0.42),
            (RougeL(F1), 0.7, 0.5),
        ];
        let mut file = ThresholdFile::default();
        for (metric, gt, uqdb) in rows {
            for (scenario, value) in [(Scenario::Gt, gt), (Scenario::Uqdb, uqdb)] {
                file.upsert_single(SingleEntry {
                    threshold: SingleThreshold {
                        metric: metric.clone(),
                        scenario,
                        value,
                    },
                    grid_step: None,
                    dev_macro_f1: None,
                    source: Some("published".into()),
                });
            }
        }
        for (scenario, th) in [
            (Scenario::Gt, [0.0, 0.1, 0.9, 1.0]),
            (Scenario::Uqdb, [0.05, 0.1, 0.87, 1.0]),
        ] {
            file.upsert_band(BandEntry {
                band: ThresholdBand::new(Rouge1(Recall), scenario, th)
                    .expect("published band is ordered"),
                grid_step: None,
                dev_macro_f1: None,
                objective: None,
                source: Some("published".into()),
            });
        }
        file
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::ParseStatus;
    use std::cell::Cell as StdCell;
    use std::convert::Infallible;

    fn verdict(v: bool) -> JudgeVerdict {
        JudgeVerdict {
            verdict: Some(v),
            raw_text: if v { "True" } else { "False" }.into(),
            parse_status: ParseStatus::Parsed,
            run_index: 0,
            cached: false,
            reasked: false,
        }
    }

    fn gt_band() -> ThresholdBand {
        ThresholdBand::new(MetricKind::DEFAULT, Scenario::Gt, [0.0, 0.1, 0.9, 1.0]).unwrap()
    }

    #[test]
    fn single_threshold_is_strict() {
        let t = SingleThreshold::new(MetricKind::DEFAULT, Scenario::Gt, 0.45).unwrap();
        assert_eq!(metrics_judge(0.50, &t).label, 1);
        assert_eq!(metrics_judge(0.45, &t).label, 0);
        assert_eq!(metrics_judge(0.0, &t).label, 0);
        assert_eq!(metrics_judge(0.5, &t).provenance, Provenance::BandConfident);
        assert!(SingleThreshold::new(MetricKind::DEFAULT, Scenario::Gt, 1.2).is_err());
    }

    #[test]
    fn combo_examples() {
        let band = gt_band();
        let calls = StdCell::new(0);
        let judge = |v: bool| {
            let calls = &calls;
            move || -> Result<JudgeVerdict, Infallible> {
                calls.set(calls.get() + 1);
                Ok(verdict(v))
            }
        };
        let d = combo_decide(0.95, &band, judge(false)).unwrap();
        assert_eq!((d.label, d.provenance), (1, Provenance::BandConfident));
        let d = combo_decide(0.08, &band, judge(true)).unwrap();
        assert_eq!((d.label, d.provenance), (0, Provenance::BandConfident));
        assert_eq!(calls.get(), 0);

        let d = combo_decide(0.0, &band, judge(true)).unwrap();
        assert_eq!((d.label, d.provenance), (1, Provenance::JudgeDecided));
        let d = combo_decide(0.5, &band, judge(false)).unwrap();
        assert_eq!((d.label, d.provenance), (0, Provenance::JudgeDecided));
        assert!(d.verdict.is_some());
        assert_eq!(calls.get(), 2);
    }

    #[test]
    fn band_edges() {
        let band = gt_band();
        assert_eq!(band.region(0.1), Region::Class0);
        assert_eq!(band.region(0.1000001), Region::Pending);
        assert_eq!(band.region(0.9), Region::Pending);
        assert_eq!(band.region(1.0), Region::Class1);
        assert_eq!(band.region(0.0), Region::Pending);
    }

    #[test]
    fn band_order_is_enforced() {
        assert!(
            ThresholdBand::new(MetricKind::DEFAULT, Scenario::Gt, [0.2, 0.1, 0.9, 1.0]).is_err()
        );
        assert!(
            ThresholdBand::new(MetricKind::DEFAULT, Scenario::Gt, [0.0, 0.5, 0.4, 1.0]).is_err()
        );
        assert!(
            ThresholdBand::new(MetricKind::DEFAULT, Scenario::Gt, [0.0, 0.1, 0.9, 1.1]).is_err()
        );
    }

    #[test]
    fn llm_method_follows_verdict() {
        let d = llm_judge_method(0.3, || Ok::<_, Infallible>(verdict(true))).unwrap();
        assert_eq!((d.label, d.provenance), (1, Provenance::JudgeDecided));
        let ambiguous = JudgeVerdict {
            verdict: None,
            raw_text: "maybe".into(),
            parse_status: ParseStatus::Ambiguous,
            run_index: 0,
            cached: false,
            reasked: true,
        };
        let d = llm_judge_method(0.3, || Ok::<_, Infallible>(ambiguous)).unwrap();
        assert_eq!(d.label, 0);
        assert!(d.is_parse_failure());
    }

    #[test]
    fn grid_hits_published_values() {
        let g = grid_points(0.01).unwrap();
        assert_eq!(g.len(), 101);
        for v in [0.45, 0.87, 0.9, 0.05, 0.1, 0.4, 1.0, 0.0] {
            assert!(g.contains(&v), "{v} missing");
        }
        let g = grid_points(0.3).unwrap();
        assert_eq!(g, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(grid_points(0.0).is_err());
        assert!(grid_points(0.6).is_err());
    }

    #[test]
    fn calibrate_single_fixture() {
        // brute force over the 21-point grid: thresholds 0.30..0.55 all
        // separate perfectly; 0.30 is the smallest since 0.3 > 0.3 is false
        let dev = [(0.2, 0), (0.3, 0), (0.6, 1), (0.8, 1)];
        let c = calibrate_single(&dev, 0.05).unwrap();
        assert_eq!(c.value, 0.3);
        assert_eq!(c.macro_f1, 1.0);
        assert!(matches!(
            calibrate_single(&[(0.2, 1)], 0.05),
            Err(CascadeError::SingleClass(1))
        ));
        assert!(matches!(
            calibrate_single(&[], 0.05),
            Err(CascadeError::EmptyDev)
        ));
    }

    #[test]
    fn calibrate_band_separable_extremes() {
        let mut dev = Vec::new();
        for s in [0.02, 0.05, 0.1] {
            dev.push(DevItem {
                score: s,
                human_label: 0,
                judge_label: Some(1),
            });
        }
        for s in [0.93, 0.97, 1.0] {
            dev.push(DevItem {
                score: s,
                human_label: 1,
                judge_label: Some(0),
            });
        }
        let c = calibrate_band(&dev, 0.01, BandObjective::FullPipeline).unwrap();
        assert_eq!(c.macro_f1, 1.0);
        assert_eq!(c.pending, 0);
        assert_eq!(c.thresholds, [0.0, 0.1, 0.1, 1.0]);
        let missing = [
            DevItem {
                score: 0.5,
                human_label: 0,
                judge_label: None,
            },
            dev[5],
        ];
        assert!(matches!(
            calibrate_band(&missing, 0.01, BandObjective::FullPipeline),
            Err(CascadeError::MissingVerdict(0))
        ));
        assert!(calibrate_band(&missing, 0.01, BandObjective::ConfidentOnly).is_ok());
    }

    #[test]
    fn published_file_round_trips() {
        let f = ThresholdFile::published();
        assert_eq!(f.single.len(), 26);
        assert_eq!(
            f.single_for(&MetricKind::DEFAULT, Scenario::Uqdb)
                .unwrap()
                .threshold
                .value,
            0.4
        );
        assert_eq!(
            f.band_for(&MetricKind::DEFAULT, Scenario::Uqdb)
                .unwrap()
                .band
                .thresholds(),
            [0.05, 0.1, 0.87, 1.0]
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        f.save(&p).unwrap();
        assert_eq!(ThresholdFile::load(&p).unwrap(), f);
        assert!(f.band_for(&MetricKind::CosineTf, Scenario::Gt).is_err());
    }
}
