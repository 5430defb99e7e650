use std::collections::HashMap;

use anyhow::{anyhow, Result};
use nlr_eval::cascade::{self, BandEntry, BandObjective, DevItem, SingleEntry, ThresholdFile};
use nlr_eval::corpus::Split;
use nlr_eval::{SingleThreshold, ThresholdBand};
use serde_json::json;

use crate::args::{CalibrateArgs, CalibrationKind};
use crate::batch::{self, params_with};
use crate::context::{usage, Ctx};
use crate::pipeline;

pub fn run(ctx: &Ctx, args: &CalibrateArgs) -> Result<()> {
    let objective = BandObjective::from(args.objective);
    let needs_verdicts =
        args.method == CalibrationKind::Band && objective == BandObjective::FullPipeline;
    if needs_verdicts && args.verdicts.is_none() && args.model.is_none() {
        return Err(usage(
            "band calibration needs --verdicts or --model (or --objective confident-only)",
        ));
    }
    let client = match (&args.model, needs_verdicts && args.verdicts.is_none()) {
        (Some(m), true) => Some(ctx.config.build_client(m)?),
        _ => None,
    };

    let corpus = ctx.load_corpus(&args.dev)?;
    let items = pipeline::items(&corpus, args.scenario, &ctx.config.uqdb_template, |c| {
        c.split == Split::Dev && c.human_label.is_some()
    })?;
    let registry = ctx.config.build_registry()?;
    let pool = ctx.pool()?;
    let scores = pipeline::metric_values(&pool, &items, &args.metric, &registry)?;

    let mut file = if args.out.exists() {
        ThresholdFile::load(&args.out)?
    } else {
        ThresholdFile::default()
    };

    let summary = match args.method {
        CalibrationKind::Single => {
            let dev: Vec<(f64, u8)> = items
                .iter()
                .zip(&scores)
                .map(|(it, s)| (*s, it.cand.human_label.expect("filtered")))
                .collect();
            let cal = cascade::calibrate_single(&dev, args.grid_step)?;
            file.upsert_single(SingleEntry {
                threshold: SingleThreshold::new(args.metric.clone(), args.scenario, cal.value)?,
                grid_step: Some(cal.grid_step),
                dev_macro_f1: Some(cal.macro_f1),
                source: Some(format!("calibrated on {} dev items", dev.len())),
            });
            json!({ "method": "single", "metric": args.metric, "scenario": args.scenario, "result": cal })
        }
        CalibrationKind::Band => {
            let judge_labels: Vec<Option<u8>> = if !needs_verdicts {
                vec![None; items.len()]
            } else if let Some(path) = &args.verdicts {
                let by_key: HashMap<(String, String), u8> = batch::read_verdicts(path)?
                    .into_iter()
                    .filter(|v| v.scenario == args.scenario && v.run_index == args.run_index)
                    .map(|v| ((v.sample_id, v.generator), v.label))
                    .collect();
                items
                    .iter()
                    .map(|it| {
                        by_key
                            .get(&(it.cand.sample_id.clone(), it.cand.generator.clone()))
                            .copied()
                    })
                    .collect()
            } else {
                let client = client.as_ref().expect("built above");
                let params = params_with(ctx, None)?;
                batch::judge_runs(ctx, client, &params, &items, args.scenario, 1)?
                    .into_iter()
                    .map(|v| Some(v.label))
                    .collect()
            };
            let dev: Vec<DevItem> = items
                .iter()
                .zip(&scores)
                .zip(&judge_labels)
                .map(|((it, s), j)| DevItem {
                    score: *s,
                    human_label: it.cand.human_label.expect("filtered"),
                    judge_label: *j,
                })
                .collect();
            if let Some(i) = dev
                .iter()
                .position(|d| needs_verdicts && d.judge_label.is_none())
            {
                let it = &items[i];
                return Err(
                    anyhow!(cascade::CascadeError::MissingVerdict(i)).context(format!(
                        "no verdict for {} / {}",
                        it.cand.sample_id, it.cand.generator
                    )),
                );
            }
            let cal = cascade::calibrate_band(&dev, args.grid_step, objective)?;
            file.upsert_band(BandEntry {
                band: ThresholdBand::new(args.metric.clone(), args.scenario, cal.thresholds)?,
                grid_step: Some(cal.grid_step),
                dev_macro_f1: Some(cal.macro_f1),
                objective: Some(cal.objective),
                source: Some(format!("calibrated on {} dev items", dev.len())),
            });
            json!({ "method": "band", "metric": args.metric, "scenario": args.scenario, "result": cal })
        }
    };
    file.save(&args.out)?;
    ctx.provenance("calibrate", args, Some(&args.dev), Some(summary.clone()))?
        .write_beside(&args.out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
