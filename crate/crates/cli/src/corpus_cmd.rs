use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;

use anyhow::{Context as _, Result};
use nlr_eval::corpus::{
    self, CorpusStats, SizeBucket, Summary, TextStats, CANDIDATES_FILE, SAMPLES_FILE,
};
use serde::Serialize;

use crate::args::{SampleArgs, StatsArgs, StatsFormat};
use crate::context::{emit, Ctx};

#[derive(Serialize)]
struct BucketView<'a> {
    samples: usize,
    excluded: usize,
    bucket: SizeBucket,
    stats: Option<&'a TextStats>,
}

pub fn stats(ctx: &Ctx, args: &StatsArgs) -> Result<()> {
    let corpus = ctx.load_corpus(&args.input)?;
    let stats = corpus::corpus_stats(&corpus);
    let text = match (args.format, args.bucket) {
        (StatsFormat::Json, None) => to_json(&stats)?,
        (StatsFormat::Json, Some(b)) => to_json(&BucketView {
            samples: stats.samples,
            excluded: stats.excluded,
            bucket: b,
            stats: stats.per_bucket.get(&b),
        })?,
        (StatsFormat::Markdown, bucket) => markdown(&stats, bucket),
    };
    emit(args.out.as_ref(), &text)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn row(out: &mut String, name: &str, unit: &str, s: &Summary) {
    let _ = writeln!(
        out,
        "| {name} | {unit} | {} | {:.2} | {:.2} | {} | {} | {} | {} | {} |",
        s.count, s.mean, s.std, s.min, s.p25, s.p50, s.p75, s.max
    );
}

fn markdown(stats: &CorpusStats, only: Option<SizeBucket>) -> String {
    let mut out = format!(
        "Samples: {} (excluded: {})\n\n",
        stats.samples, stats.excluded
    );
    out.push_str("| Result size | Unit | Count | Mean | Std | Min | 25% | 50% | 75% | Max |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for (b, t) in &stats.per_bucket {
        if only.is_some_and(|o| o != *b) {
            continue;
        }
        row(&mut out, b.label(), "chars", &t.chars);
        row(&mut out, b.label(), "words", &t.words);
    }
    if let (None, Some(t)) = (only, &stats.overall) {
        row(&mut out, "all", "chars", &t.chars);
        row(&mut out, "all", "words", &t.words);
    }
    out
}

pub fn sample(ctx: &Ctx, args: &SampleArgs) -> Result<()> {
    let corpus = ctx.load_corpus(&args.input)?;
    let chosen = corpus::stratified_sample(&corpus, args.per_bucket, args.seed);
    let ids: HashSet<&str> = chosen.iter().map(|s| s.id.as_str()).collect();
    let candidates: Vec<_> = corpus
        .candidates()
        .iter()
        .filter(|c| ids.contains(c.sample_id.as_str()))
        .cloned()
        .collect();

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join(SAMPLES_FILE);
    let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    corpus::write_samples_jsonl(BufWriter::new(f), &chosen)?;
    if !candidates.is_empty() {
        let path = args.out.join(CANDIDATES_FILE);
        let f = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        corpus::write_candidates_jsonl(BufWriter::new(f), &candidates)?;
    }
    ctx.provenance("corpus sample", args, Some(&args.input), None)?
        .write(&args.out.join("provenance.json"))?;
    eprintln!(
        "sampled {} of {} samples into {}",
        chosen.len(),
        corpus.len(),
        args.out.display()
    );
    Ok(())
}
