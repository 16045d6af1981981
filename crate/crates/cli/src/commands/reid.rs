use anyhow::Context as _;
use serde_json::json;
use trackletlab_core::aggregation::evaluate_tracklets;
use trackletlab_core::retrieval::{build_gallery, eval_probes, top1_report, Top1Report};

use super::{check_k, manifest};
use crate::cli::ReidEvalArgs;
use crate::config::{required, Level, ReidEvalConfig};
use crate::report::{csv_preamble, emit, envelope, to_json};
use crate::Context;

fn csv(c: &ReidEvalConfig, seed: u64, r: &Top1Report) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "identity", "probes", "correct", "accuracy"])?;
    for a in &r.per_identity {
        w.write_record([
            "identity",
            &a.identity,
            &a.probes.to_string(),
            &a.correct.to_string(),
            &a.accuracy.to_string(),
        ])?;
    }
    let probes: usize = r.per_identity.iter().map(|a| a.probes).sum();
    let correct: usize = r.per_identity.iter().map(|a| a.correct).sum();
    w.write_record([
        "balanced",
        "",
        &probes.to_string(),
        &correct.to_string(),
        &r.balanced_top1.to_string(),
    ])?;
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(csv_preamble("reid-eval", seed, c)? + &body)
}

pub fn run(args: &ReidEvalArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.reid_eval.clone();
    args.apply(&mut c);
    check_k(c.k)?;
    let m = manifest("reid eval", required(&c.manifest, "manifest")?)?;
    let g = build_gallery(&m, c.split).context("reid eval: building gallery")?;
    let (report, decisions) = match c.level {
        Level::Frame => {
            let probes = eval_probes(&m, c.split);
            (
                top1_report(&g, &probes, c.k).context("reid eval: frame-level retrieval")?,
                None,
            )
        }
        Level::Tracklet => {
            let e = evaluate_tracklets(&m, &g, c.split, c.strategy, c.k).context("reid eval: tracklet aggregation")?;
            (e.report, Some(e.decisions))
        }
    };
    let as_json = c
        .report
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    let text = if as_json {
        let result = json!({
            "balanced_top1": report.balanced_top1,
            "per_identity": report.per_identity,
            "decisions": decisions,
        });
        to_json(&envelope("reid-eval", ctx.seed, &c, result))?
    } else {
        csv(&c, ctx.seed, &report)?
    };
    emit(c.report.as_deref(), &text)
}
