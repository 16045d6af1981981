use anyhow::Context as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use trackletlab_core::explain::{
    assemble_probes, curve_auc, grad_knn_margin, grad_proto_margin, grad_similarity, perturbation_curve,
    read_relevance_maps, score_knn_margin, score_proto_margin, score_similarity, PerturbationOrder, ProxyContext,
};
use trackletlab_core::retrieval::{build_gallery, eval_probes};
use trackletlab_core::synth::{read_patch_grids, ToyPatchEmbedder};
use trackletlab_core::vecmath::norm;

use super::{check_k, ensure, manifest};
use crate::cli::{ExplainCurveArgs, ExplainScoreArgs};
use crate::config::{config_error, required, ScoreKind};
use crate::report::{emit, envelope, to_json};
use crate::Context;

pub fn curve(args: &ExplainCurveArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.explain_curve.clone();
    args.apply(&mut c);
    check_k(c.k)?;
    ensure(
        c.fractions.first() == Some(&0.0)
            && c.fractions.iter().all(|f| (0.0..=1.0).contains(f))
            && c.fractions.windows(2).all(|w| w[0] < w[1]),
        || "fractions must start at 0 and increase strictly within [0, 1]".into(),
    )?;
    let m = manifest("explain curve", required(&c.manifest, "manifest")?)?;
    let patches_path = required(&c.patches, "patches")?;
    let grids = read_patch_grids(patches_path)
        .with_context(|| format!("explain curve: reading patches {}", patches_path.display()))?;
    let rel_path = required(&c.relevance, "relevance")?;
    let maps = read_relevance_maps(rel_path)
        .with_context(|| format!("explain curve: reading relevance {}", rel_path.display()))?;
    let emb_path = required(&c.embedder, "embedder")?;
    let text = std::fs::read_to_string(emb_path)
        .with_context(|| format!("explain curve: reading embedder {}", emb_path.display()))?;
    let raw: ToyPatchEmbedder =
        serde_json::from_str(&text).map_err(|e| config_error(format!("embedder {}: {e}", emb_path.display())))?;
    let embedder = ToyPatchEmbedder::new(raw.rows, raw.cols, raw.weights).context("explain curve: embedder")?;
    ensure(
        grids
            .iter()
            .all(|(_, g)| (g.rows, g.cols) == (embedder.rows, embedder.cols)),
        || "patch grids do not match the embedder's grid shape".into(),
    )?;

    let probes = assemble_probes(&m, grids, maps).context("explain curve: pairing grids with relevance maps")?;
    let g = build_gallery(&m, c.split).context("explain curve: building gallery")?;
    let orders = match c.order {
        Some(o) => vec![o],
        None => vec![PerturbationOrder::Morf, PerturbationOrder::Lerf],
    };
    let mut curves = Vec::new();
    for order in orders {
        let curve = perturbation_curve(&probes, &embedder, &g, order, &c.fractions, c.k)
            .with_context(|| format!("explain curve: {order:?} curve"))?;
        curves.push(json!({
            "order": curve.order,
            "fractions": curve.fractions,
            "accuracy": curve.accuracy,
            "auc": curve_auc(&curve),
        }));
    }
    let result = json!({ "probes": probes.len(), "curves": curves });
    emit(
        c.report.as_deref(),
        &to_json(&envelope("explain-curve", ctx.seed, &c, result))?,
    )
}

#[derive(Serialize)]
struct ScoreEntry {
    kind: ScoreKind,
    value: f64,
    gradient_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct ProbeScores {
    record_id: u64,
    identity: String,
    friends: usize,
    foes: usize,
    scores: Vec<ScoreEntry>,
}

pub fn score(args: &ExplainScoreArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.explain_score.clone();
    args.apply(&mut c);
    ensure(c.tau > 0.0 && c.tau.is_finite(), || "tau must be positive".into())?;
    ensure(c.k_hard >= 1, || "k_hard must be at least 1".into())?;
    ensure(!c.scores.is_empty(), || "at least one score is needed".into())?;
    let m = manifest("explain score", required(&c.manifest, "manifest")?)?;
    let g = build_gallery(&m, c.split).context("explain score: building gallery")?;
    let mut probes = eval_probes(&m, c.split);
    if let Some(id) = c.record_id {
        probes.retain(|p| p.record_id == id);
        if probes.is_empty() {
            anyhow::bail!(
                "explain score: record {id} is not an evaluation probe of split {}",
                c.split
            );
        }
    }

    let rows: Vec<ProbeScores> = probes
        .par_iter()
        .map(|p| -> anyhow::Result<ProbeScores> {
            let (mut friends, mut foes) = (Vec::new(), Vec::new());
            for i in 0..g.len() {
                if g.encounter(i) == &p.encounter {
                    continue;
                }
                if g.identity(i) == p.identity {
                    friends.push(g.row(i).to_vec());
                } else {
                    foes.push(g.row(i).to_vec());
                }
            }
            let (n_friends, n_foes) = (friends.len(), foes.len());
            let mut pc = ProxyContext::new(p.vector.to_vec(), friends, foes)
                .with_temperature(c.tau)
                .with_hard_negatives(c.k_hard.min(n_foes.max(1)))
                .with_seed(ctx.seed ^ p.record_id);
            pc.friend_weighting = c.prototype;
            let scores = c
                .scores
                .iter()
                .map(|&kind| {
                    let (value, grad) = match kind {
                        ScoreKind::Sim => (score_similarity(&pc)?, grad_similarity(&pc)?),
                        ScoreKind::Proto => (score_proto_margin(&pc)?, grad_proto_margin(&pc)?),
                        ScoreKind::Knn => (score_knn_margin(&pc)?, grad_knn_margin(&pc)?),
                    };
                    Ok(ScoreEntry {
                        kind,
                        value,
                        gradient_norm: norm(&grad),
                        gradient: c.gradient.then_some(grad),
                    })
                })
                .collect::<trackletlab_core::Result<Vec<_>>>()
                .with_context(|| format!("explain score: record {}", p.record_id))?;
            Ok(ProbeScores {
                record_id: p.record_id,
                identity: p.identity.clone(),
                friends: n_friends,
                foes: n_foes,
                scores,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let result = json!({ "probes": rows });
    emit(
        c.report.as_deref(),
        &to_json(&envelope("explain-score", ctx.seed, &c, result))?,
    )
}
