use std::path::Path;

use anyhow::Context as _;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use trackletlab_core::datamodel::io::write_vectors;
use trackletlab_core::datamodel::mot::{rows_from_tracks, write_mot, MotRow};
use trackletlab_core::datamodel::{save_manifest, Manifest, VectorStorage};
use trackletlab_core::explain::write_relevance_maps;
use trackletlab_core::synth::{
    gen_mot_scenario, gen_patch_scenario, gen_reid_scenario, write_patch_grids, MotSpec, PatchSpec, ReidSpec,
};

use crate::cli::{SynthArgs, SynthKind};
use crate::config::{config_error, required};
use crate::report::{emit, envelope, to_json};
use crate::Context;

fn load_spec<T: DeserializeOwned + Default>(path: Option<&Path>) -> anyhow::Result<T> {
    let Some(p) = path else { return Ok(T::default()) };
    let text =
        std::fs::read_to_string(p).map_err(|e| config_error(format!("cannot read spec {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("spec {}: {e}", p.display())))
}

fn write_manifest(m: &Manifest, out: &Path) -> anyhow::Result<()> {
    save_manifest(
        m,
        out.join("manifest.jsonl"),
        &VectorStorage::Sidecar("vectors.bin".into()),
    )
    .context("synth: writing manifest")
}

#[derive(Serialize)]
struct Resolved<'a, S: Serialize> {
    kind: &'a str,
    out: &'a Path,
    spec: &'a S,
}

pub fn run(args: &SynthArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.synth.clone();
    args.apply(&mut c);
    let out = required(&c.out, "out")?;
    std::fs::create_dir_all(out).with_context(|| format!("synth: creating {}", out.display()))?;
    let spec_path = c.spec.as_deref();

    let text = match args.kind {
        SynthKind::Reid => {
            let mut spec: ReidSpec = load_spec(spec_path)?;
            spec.seed = ctx.seed;
            let s = gen_reid_scenario(&spec).context("synth reid")?;
            write_manifest(&s.manifest, out)?;
            let result = json!({
                "files": ["manifest.jsonl", "vectors.bin"],
                "tracklets": s.manifest.tracklets.len(),
                "records": s.manifest.records.len(),
                "identities": s.centroids.len(),
            });
            to_json(&envelope(
                "synth",
                ctx.seed,
                Resolved {
                    kind: "reid",
                    out,
                    spec: &spec,
                },
                result,
            ))?
        }
        SynthKind::Mot => {
            let mut spec: MotSpec = load_spec(spec_path)?;
            spec.seed = ctx.seed;
            let s = gen_mot_scenario(&spec).context("synth mot")?;
            write_mot(out.join("gt.txt"), &rows_from_tracks(&s.gt)).context("synth: writing gt.txt")?;
            let rows: Vec<MotRow> = s
                .detections
                .iter()
                .map(|d| MotRow {
                    frame: d.frame_index,
                    id: -1,
                    bbox: d.bbox,
                    score: d.score,
                })
                .collect();
            write_mot(out.join("det.txt"), &rows).context("synth: writing det.txt")?;
            let mut files = vec!["gt.txt", "det.txt"];
            if spec.embedding_dim > 0 {
                let emb: Vec<&[f64]> = s.detections.iter().filter_map(|d| d.embedding.as_deref()).collect();
                write_vectors(out.join("emb.bin"), spec.embedding_dim, &emb).context("synth: writing emb.bin")?;
                files.push("emb.bin");
            }
            let result = json!({
                "files": files,
                "video_id": spec.video_id,
                "objects": s.gt.len(),
                "gt_boxes": s.gt.iter().map(|t| t.boxes.len()).sum::<usize>(),
                "detections": s.detections.len(),
            });
            to_json(&envelope(
                "synth",
                ctx.seed,
                Resolved {
                    kind: "mot",
                    out,
                    spec: &spec,
                },
                result,
            ))?
        }
        SynthKind::Patch => {
            let mut spec: PatchSpec = load_spec(spec_path)?;
            // One seed drives both stages; the offset keeps their streams apart.
            spec.reid.seed = ctx.seed;
            spec.seed = ctx.seed.wrapping_add(1);
            let s = gen_patch_scenario(&spec).context("synth patch")?;
            write_manifest(&s.manifest, out)?;
            write_patch_grids(out.join("patches.jsonl"), &s.grids).context("synth: writing patches.jsonl")?;
            write_relevance_maps(out.join("relevance.rlv"), &s.relevance).context("synth: writing relevance.rlv")?;
            let embedder = to_json(&s.embedder)?;
            std::fs::write(out.join("embedder.json"), embedder).context("synth: writing embedder.json")?;
            let result = json!({
                "files": ["manifest.jsonl", "vectors.bin", "patches.jsonl", "relevance.rlv", "embedder.json"],
                "probes": s.grids.len(),
                "records": s.manifest.records.len(),
            });
            to_json(&envelope(
                "synth",
                ctx.seed,
                Resolved {
                    kind: "patch",
                    out,
                    spec: &spec,
                },
                result,
            ))?
        }
    };
    emit(Some(&out.join("report.json")), &text)
}
