//! Acceptance suite. Prints one line per criterion and exits non-zero when
//! any criterion fails. Run with `cargo test -p nlr-eval-cli --test acceptance`.
//!
//! Criteria 6 and the dataset half of 8 need the full labeled corpus; point
//! `NLR_EVAL_DATASET` at its directory to run them.

use std::collections::HashMap;
use std::convert::Infallible;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nlr_eval::cascade::{
    calibrate_band, calibrate_single, combo_decide, grid_points, llm_judge_method, BandObjective,
    DevItem, Region, ThresholdFile,
};
use nlr_eval::config::Config;
use nlr_eval::corpus::{build_reference, corpus_stats, load_corpus};
use nlr_eval::judge::{render_generation_prompt, render_judge_prompt, ParseStatus};
use nlr_eval::metrics::{class_medians, lcs_len, rouge_l, rouge_n, score_tokens, tokenize};
use nlr_eval::report::{aggregate_runs, call_savings, score_labels, score_run};
use nlr_eval::{
    ClassScores, Decision, InferenceParams, JudgeVerdict, MetricKind, Provenance, ResultTable,
    Scenario, ThresholdBand, TokenSequence,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

enum Outcome {
    Pass,
    Skip(String),
}

type Check = Result<Outcome, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("ROUGE oracle equivalence", rouge_oracle),
        ("cascade algebra", cascade_algebra),
        ("degenerate band equals LLM judge", degenerate_band),
        ("calibration optimality", calibration),
        ("scoring arithmetic", scoring),
        ("published-data regression", dataset_regression),
        ("prompt golden files", prompt_goldens),
        ("corpus statistics", statistics),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let ms = start.elapsed().as_millis();
        match result {
            Ok(Outcome::Pass) => println!("criterion {}: PASS {name} ({ms} ms)", i + 1),
            Ok(Outcome::Skip(why)) => println!("criterion {}: SKIP {name}: {why}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn within(start: Instant, limit: Duration) -> Check {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:?}, limit {limit:?}");
    Ok(Outcome::Pass)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

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

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

fn prf(overlap: usize, n_cand: usize, n_ref: usize) -> [f64; 3] {
    let r = if n_ref == 0 {
        0.0
    } else {
        overlap as f64 / n_ref as f64
    };
    let p = if n_cand == 0 {
        0.0
    } else {
        overlap as f64 / n_cand as f64
    };
    let f = if r == 0.0 || p == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    [r, p, f]
}

fn exhaustive_lcs(a: &[String], b: &[String]) -> usize {
    (0u32..1 << a.len())
        .filter(|mask| {
            let mut hay = b.iter();
            (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .all(|i| hay.any(|h| *h == a[i]))
        })
        .map(u32::count_ones)
        .max()
        .unwrap_or(0) as usize
}

fn rouge_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut words = || -> Vec<String> {
        let len = rng.random_range(0..=8);
        (0..len)
            .map(|_| ["a", "b", "c", "d"][rng.random_range(0..4)].to_string())
            .collect()
    };
    for case in 0..1000 {
        let (c, r) = (words(), words());
        let (cs, rs): (TokenSequence, TokenSequence) =
            (c.iter().cloned().collect(), r.iter().cloned().collect());
        for n in 1..=2 {
            let (cc, rc) = (ngram_counts(&c, n), ngram_counts(&r, n));
            let overlap = cc
                .iter()
                .map(|(g, k)| (*k).min(*rc.get(g).unwrap_or(&0)))
                .sum();
            let want = prf(overlap, cc.values().sum(), rc.values().sum());
            let got = rouge_n(&cs, &rs, n);
            ensure!(
                want.iter()
                    .zip([got.recall, got.precision, got.f1])
                    .all(|(w, g)| close(*w, g)),
                "case {case}: rouge-{n} {got:?} vs {want:?}"
            );
        }
        let l = exhaustive_lcs(&c, &r);
        ensure!(lcs_len(&c, &r) == l, "case {case}: lcs");
        let want = prf(l, c.len(), r.len());
        let got = rouge_l(&cs, &rs);
        ensure!(
            want.iter()
                .zip([got.recall, got.precision, got.f1])
                .all(|(w, g)| close(*w, g)),
            "case {case}: rouge-l {got:?} vs {want:?}"
        );
    }
    within(start, Duration::from_secs(5))
}

fn random_band(rng: &mut ChaCha8Rng) -> ThresholdBand {
    let mut th: [f64; 4] = std::array::from_fn(|_| (rng.random_range(0..=20) as f64) / 20.0);
    th.sort_by(f64::total_cmp);
    ThresholdBand::new(MetricKind::DEFAULT, Scenario::Gt, th).unwrap()
}

fn random_score(rng: &mut ChaCha8Rng, band: &ThresholdBand) -> f64 {
    if rng.random_bool(0.3) {
        band.thresholds()[rng.random_range(0..4)]
    } else {
        rng.random::<f64>()
    }
}

fn cascade_algebra() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut invocations = 0usize;
    let mut provenances = Vec::new();
    for case in 0..500 {
        let band = random_band(&mut rng);
        let score = random_score(&mut rng, &band);
        let mut calls = 0;
        let mut ask = |v: bool| {
            calls += 1;
            Ok::<_, Infallible>(verdict(v))
        };
        let yes = combo_decide(score, &band, || ask(true)).unwrap();
        let no = combo_decide(score, &band, || ask(false)).unwrap();
        match band.region(score) {
            Region::Pending => {
                ensure!(
                    calls == 2,
                    "case {case}: pending item called the judge {calls} times"
                );
                ensure!(
                    (yes.label, no.label) == (1, 0),
                    "case {case}: pending label ignores the verdict"
                );
                ensure!(
                    yes.provenance == Provenance::JudgeDecided,
                    "case {case}: provenance"
                );
                invocations += 1;
            }
            _ => {
                ensure!(calls == 0, "case {case}: confident item called the judge");
                ensure!(
                    yes == no,
                    "case {case}: confident decision depends on the verdict"
                );
            }
        }
        provenances.push(yes.provenance);
    }
    let saved = call_savings(&provenances).unwrap();
    ensure!(
        saved + invocations as f64 / 500.0 == 1.0,
        "savings {saved} with {invocations} calls"
    );
    within(start, Duration::from_secs(1))
}

fn stub_client(mode: &str) -> (tempfile::TempDir, nlr_eval::JudgeClient) {
    let dir = tempfile::tempdir().unwrap();
    let config = Config {
        cache_dir: dir.path().to_path_buf(),
        ..Config::default()
    };
    let client = config.build_client(&format!("stub:{mode}")).unwrap();
    (dir, client)
}

fn degenerate_band() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (_dir, client) = stub_client("alternate");
    let params = InferenceParams::default();
    for batch in 0..5 {
        let low = rng.random::<f64>();
        let high = low + (1.0 - low) * rng.random::<f64>();
        let band = ThresholdBand::degenerate(MetricKind::DEFAULT, Scenario::Gt, low, high).unwrap();
        let mut combo = Vec::new();
        let mut llm = Vec::new();
        for i in 0..100 {
            let s = if i % 10 == 0 {
                [0.0, low, high, 1.0][i / 10 % 4]
            } else {
                rng.random::<f64>()
            };
            let cand = format!("candidate {batch} {i}");
            let ask = || client.judge(&params, "q", "reference", &cand, 0);
            combo.push(combo_decide(s, &band, ask).map_err(|e| e.to_string())?);
            llm.push(llm_judge_method(s, ask).map_err(|e| e.to_string())?);
        }
        ensure!(
            combo
                .iter()
                .all(|d| d.provenance == Provenance::JudgeDecided),
            "batch {batch}: confident item"
        );
        let strip = |v: Vec<Decision>| {
            v.into_iter()
                .map(|mut d| {
                    if let Some(v) = d.verdict.as_mut() {
                        v.cached = false;
                    }
                    d
                })
                .collect::<Vec<_>>()
        };
        ensure!(
            strip(combo) == strip(llm),
            "batch {batch}: decision streams differ"
        );
    }
    Ok(Outcome::Pass)
}

fn macro_f1_oracle(dev: &[(f64, u8)], t: f64) -> f64 {
    let pairs: Vec<(u8, u8)> = dev.iter().map(|&(s, l)| (u8::from(s > t), l)).collect();
    let f1 = |c: u8| {
        let tp = pairs.iter().filter(|&&(p, h)| p == c && h == c).count() as f64;
        let fp = pairs.iter().filter(|&&(p, h)| p == c && h != c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(p, h)| p != c && h == c).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    (f1(0) + f1(1)) / 2.0
}

fn calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = grid_points(0.05).unwrap();
    let mut trials = 0;
    while trials < 100 {
        let n = rng.random_range(2..=12);
        let dev: Vec<(f64, u8)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..=20) as f64 / 20.0,
                    rng.random_range(0..=1),
                )
            })
            .collect();
        if !(dev.iter().any(|d| d.1 == 0) && dev.iter().any(|d| d.1 == 1)) {
            continue;
        }
        trials += 1;
        let got = calibrate_single(&dev, 0.05).map_err(|e| e.to_string())?;
        let best = grid
            .iter()
            .map(|&t| macro_f1_oracle(&dev, t))
            .fold(f64::NEG_INFINITY, f64::max);
        let first = *grid
            .iter()
            .find(|&&t| macro_f1_oracle(&dev, t) >= best - 1e-12)
            .unwrap();
        ensure!(
            close(got.macro_f1, best),
            "trial {trials}: F1 {} vs oracle {best}",
            got.macro_f1
        );
        ensure!(
            got.value == first,
            "trial {trials}: threshold {} vs oracle {first}",
            got.value
        );
    }

    let mut dev = Vec::new();
    for i in 1..=10 {
        let judge_label = Some(u8::from(i % 2 == 0));
        dev.push(DevItem {
            score: i as f64 / 100.0,
            human_label: 0,
            judge_label,
        });
        dev.push(DevItem {
            score: 0.9 + i as f64 / 100.0,
            human_label: 1,
            judge_label,
        });
    }
    let band =
        calibrate_band(&dev, 0.01, BandObjective::FullPipeline).map_err(|e| e.to_string())?;
    ensure!(
        band.macro_f1 == 1.0 && band.pending == 0,
        "band {:?}",
        band.thresholds
    );
    let published = ThresholdFile::published();
    let gt = published
        .band_for(&MetricKind::DEFAULT, Scenario::Gt)
        .unwrap();
    ensure!(
        gt.band.thresholds() == [0.0, 0.1, 0.9, 1.0],
        "published GT band"
    );
    for d in &dev {
        let want = if d.human_label == 1 {
            Region::Class1
        } else {
            Region::Class0
        };
        ensure!(
            gt.band.region(d.score) == want,
            "published band misplaces {}",
            d.score
        );
    }
    Ok(Outcome::Pass)
}

fn decision(label: u8) -> Decision {
    Decision {
        label,
        provenance: Provenance::BandConfident,
        metric_value: 0.5,
        verdict: None,
    }
}

fn scoring() -> Check {
    let mut fixture = Vec::new();
    fixture.extend((0..10).map(|i| (decision(u8::from(i < 8)), 1)));
    fixture.extend((0..5).map(|i| (decision(u8::from(i >= 3)), 0)));
    let s = score_run(&fixture);
    ensure!(s.macro_f1 == 0.7, "macro F1 {}", s.macro_f1);
    ensure!(s.accuracy == 11.0 / 15.0, "accuracy {}", s.accuracy);
    ensure!(
        s.class1.f1 == 0.8 && s.class0.f1 == 0.6,
        "class F1 {} {}",
        s.class0.f1,
        s.class1.f1
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut runs: Vec<ClassScores> = Vec::new();
    for case in 0..200 {
        let n = rng.random_range(1..=20);
        let pairs: Vec<(u8, u8)> = (0..n)
            .map(|_| (rng.random_range(0..=1), rng.random_range(0..=1)))
            .collect();
        let mut m = [[0f64; 2]; 2];
        for &(p, h) in &pairs {
            m[p as usize][h as usize] += 1.0;
        }
        let per = |c: usize| {
            let (tp, fp, fn_) = (m[c][c], m[c][1 - c], m[1 - c][c]);
            let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let r = if tp + fn_ == 0.0 {
                0.0
            } else {
                tp / (tp + fn_)
            };
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            [p, r, f]
        };
        let got = score_labels(pairs.iter().copied());
        let [c0, c1] = [per(0), per(1)];
        let want = [
            c0[0],
            c0[1],
            c0[2],
            c1[0],
            c1[1],
            c1[2],
            (c0[2] + c1[2]) / 2.0,
        ];
        let have = [
            got.class0.precision,
            got.class0.recall,
            got.class0.f1,
            got.class1.precision,
            got.class1.recall,
            got.class1.f1,
            got.macro_f1,
        ];
        ensure!(
            want.iter().zip(have).all(|(w, h)| close(*w, h)),
            "case {case}: {have:?} vs {want:?}"
        );
        ensure!(
            got.accuracy == (m[0][0] + m[1][1]) / n as f64,
            "case {case}: accuracy"
        );
        runs.push(got);
    }
    for chunk in runs.chunks(10) {
        let agg = aggregate_runs(chunk).unwrap();
        let xs: Vec<f64> = chunk.iter().map(|r| r.macro_f1).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let std =
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        ensure!(
            close(agg.mean.macro_f1, mean) && close(agg.std.macro_f1, std),
            "aggregate {agg:?}"
        );
    }
    Ok(Outcome::Pass)
}

fn dataset() -> Option<PathBuf> {
    std::env::var_os("NLR_EVAL_DATASET").map(PathBuf::from)
}

fn dataset_regression() -> Check {
    let Some(dir) = dataset() else {
        return Ok(Outcome::Skip(
            "NLR_EVAL_DATASET not set; needs the full labeled corpus".into(),
        ));
    };
    let corpus = load_corpus(&dir, 500).map_err(|e| e.to_string())?;
    let published = ThresholdFile::published();
    let mut scored: HashMap<Scenario, Vec<(f64, Option<u8>, bool)>> = HashMap::new();
    for c in corpus.candidates() {
        let sample = corpus.sample(&c.sample_id).unwrap();
        for scenario in [Scenario::Gt, Scenario::Uqdb] {
            let reference = build_reference(sample, scenario).map_err(|e| e.to_string())?;
            let v = score_tokens(
                &MetricKind::DEFAULT,
                &tokenize(&c.text),
                &tokenize(&reference),
            )
            .unwrap();
            let is_test = c.split == nlr_eval::Split::Test;
            scored
                .entry(scenario)
                .or_default()
                .push((v, c.human_label, is_test));
        }
    }
    let gt: Vec<(f64, u8)> = scored[&Scenario::Gt]
        .iter()
        .filter_map(|&(v, l, _)| l.map(|l| (v, l)))
        .collect();
    let med = class_medians(&gt).map_err(|e| e.to_string())?;
    ensure!(
        (med.class0 - 0.47).abs() <= 0.03 && (med.class1 - 0.86).abs() <= 0.03,
        "medians {med:?}"
    );
    for (scenario, want) in [(Scenario::Gt, 61.43), (Scenario::Uqdb, 24.48)] {
        let band = &published
            .band_for(&MetricKind::DEFAULT, scenario)
            .unwrap()
            .band;
        let test: Vec<f64> = scored[&scenario]
            .iter()
            .filter(|x| x.2)
            .map(|x| x.0)
            .collect();
        let confident = test
            .iter()
            .filter(|&&s| band.region(s) != Region::Pending)
            .count();
        let saved = 100.0 * confident as f64 / test.len() as f64;
        ensure!(
            (saved - want).abs() <= 2.0,
            "{scenario:?} savings {saved:.2}% vs {want}%"
        );
    }
    Ok(Outcome::Pass)
}

fn prompt_goldens() -> Check {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let read = |f: &str| fs::read_to_string(golden.join(f)).unwrap();
    let table = ResultTable::new(
        vec!["school".into(), "enrollment".into()],
        vec![
            vec![json!("Lincoln High"), json!(812)],
            vec![json!("Oak Park {East}"), Value::Null],
        ],
    )
    .unwrap();
    let q = "Which schools in Alameda County have more than 500 students?";
    let generation = render_generation_prompt(q, &table);
    ensure!(
        generation == read("generation_prompt.txt"),
        "generation prompt differs from golden"
    );
    ensure!(
        generation.contains("Do not miss any answer row."),
        "generation instruction missing"
    );
    let judge = render_judge_prompt(
        q,
        "Lincoln High has 812 students and Oak Park {East} has no recorded enrollment.",
        "Lincoln High (812 students).",
    );
    ensure!(
        judge == read("judge_prompt.txt"),
        "judge prompt differs from golden"
    );
    ensure!(
        judge.contains("Say True or False."),
        "judge instruction missing"
    );
    Ok(Outcome::Pass)
}

fn statistics() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let texts = [
        "a",
        "ab cd",
        "one two six",
        "w x y z",
        "a b c d e",
        "n1 n2 n3 n4 n5 n6 n7 n8 n9",
    ];
    let lines: String = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            json!({"id": format!("s{i}"), "question": "q", "columns": ["a", "b"], "rows": [[1, 2]], "gt_nlr": t})
                .to_string()
                + "\n"
        })
        .collect();
    fs::write(dir.path().join("samples.jsonl"), lines).unwrap();
    let stats = corpus_stats(&load_corpus(dir.path(), 500).map_err(|e| e.to_string())?);
    let all = stats.overall.ok_or("no summary")?;
    let c = &all.chars;
    ensure!(
        (c.min, c.p25, c.p50, c.p75, c.max) == (1.0, 5.0, 7.0, 11.0, 26.0),
        "chars {c:?}"
    );
    ensure!(
        close(c.mean, 59.0 / 6.0) && close(c.std, (2237.0f64 / 30.0).sqrt()),
        "chars moments {c:?}"
    );
    let w = &all.words;
    ensure!(
        (w.min, w.p25, w.p50, w.p75, w.max, w.mean) == (1.0, 2.0, 3.0, 5.0, 9.0, 4.0),
        "words {w:?}"
    );
    ensure!(close(w.std, 8f64.sqrt()), "words std {}", w.std);
    if let Some(dir) = dataset() {
        let stats = corpus_stats(&load_corpus(&dir, 500).map_err(|e| e.to_string())?);
        let all = stats.overall.ok_or("no summary")?;
        ensure!(
            all.chars.count == 1468 && all.chars.max == 27892.0,
            "dataset {:?}",
            all.chars
        );
    }
    Ok(Outcome::Pass)
}

fn determinism() -> Check {
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy");
    let dir = tempfile::tempdir().unwrap();
    let run = |method: &str, out: &str| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_nlr-eval"))
            .current_dir(dir.path())
            .env_remove("NLR_EVAL_CONFIG")
            .args([
                "--cache-dir",
                "cache",
                "evaluate",
                "--method",
                method,
                "--scenario",
                "gt",
            ])
            .args([
                "--thresholds",
                "published",
                "--model",
                "stub:alternate",
                "--runs",
                "3",
                "--out",
                out,
            ])
            .arg("--input")
            .arg(&toy)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        Ok(())
    };
    run("combo", "cold")?;
    run("combo", "warm1")?;
    run("combo", "warm2")?;
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    ensure!(
        read("warm1/decisions.jsonl") == read("warm2/decisions.jsonl"),
        "warm runs differ"
    );
    ensure!(
        read("cold/decisions.jsonl") == read("warm1/decisions.jsonl"),
        "cold and warm runs differ"
    );

    let report: Value = serde_json::from_slice(&read("warm1/report.json")).unwrap();
    let records: Vec<Value> = fs::read_to_string(dir.path().join("warm1/decisions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let confident = records
        .iter()
        .filter(|r| r["provenance"] == "band_confident")
        .count();
    let saved = report[0]["call_fraction_saved"].as_f64().unwrap();
    ensure!(
        saved == confident as f64 / records.len() as f64,
        "saved {saved} vs {confident}/{}",
        records.len()
    );

    run("metrics", "metrics")?;
    let report: Value = serde_json::from_slice(&read("metrics/report.json")).unwrap();
    ensure!(
        report[0]["call_fraction_saved"] == 1.0,
        "metrics method used the judge"
    );
    Ok(Outcome::Pass)
}
