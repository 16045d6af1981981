use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::{json, Map, Value};
use trackletlab_core::datamodel::io::read_vectors;
use trackletlab_core::datamodel::mot::{
    detections_from_rows, read_mot, rows_from_tracks, tracks_from_rows, write_mot, GroundTruthTrack,
};
use trackletlab_core::tracking::{evaluate, run_tracker};

use super::ensure;
use crate::cli::{MotEvalArgs, TrackArgs};
use crate::config::{config_error, required, ALL_METRICS};
use crate::report::{emit, envelope, to_json};
use crate::Context;

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// `<video>.txt` files of a directory, sorted by name.
fn mot_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    out.sort();
    Ok(out)
}

struct VideoJob {
    video_id: String,
    det: PathBuf,
    appearance: Option<PathBuf>,
    out: PathBuf,
}

fn jobs(det: &Path, out: &Path, appearance: Option<&Path>) -> anyhow::Result<Vec<VideoJob>> {
    if det.is_dir() {
        std::fs::create_dir_all(out).with_context(|| format!("track: creating {}", out.display()))?;
        mot_files(det)?
            .into_iter()
            .map(|f| {
                let video_id = stem(&f);
                let appearance = match appearance {
                    Some(dir) => {
                        let p = dir.join(format!("{video_id}.bin"));
                        if !p.is_file() {
                            return Err(config_error(format!("missing appearance file {}", p.display())));
                        }
                        Some(p)
                    }
                    None => None,
                };
                Ok(VideoJob {
                    out: out.join(format!("{video_id}.txt")),
                    video_id,
                    det: f,
                    appearance,
                })
            })
            .collect()
    } else {
        Ok(vec![VideoJob {
            video_id: stem(det),
            det: det.to_path_buf(),
            appearance: appearance.map(Path::to_path_buf),
            out: out.to_path_buf(),
        }])
    }
}

pub fn run(args: &TrackArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.track.clone();
    args.apply(&mut c);
    c.tracker.validate().map_err(|e| config_error(e.to_string()))?;
    let det = required(&c.det, "det")?;
    let out = required(&c.out, "out")?;
    let jobs = jobs(det, out, c.appearance.as_deref())?;

    let mut detections = Vec::new();
    let mut summary = Vec::new();
    for j in &jobs {
        let rows = read_mot(&j.det).with_context(|| format!("track: reading detections {}", j.det.display()))?;
        let emb = match &j.appearance {
            Some(p) => {
                let (_, v) = read_vectors(p).with_context(|| format!("track: reading appearance {}", p.display()))?;
                Some(v.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect())
            }
            None => None,
        };
        let d =
            detections_from_rows(&j.video_id, &rows, emb).with_context(|| format!("track: video {}", j.video_id))?;
        summary.push((j.video_id.clone(), d.len()));
        detections.extend(d);
    }
    let tracks = run_tracker(&detections, &c.tracker).context("track")?;

    let mut videos = Vec::new();
    for (j, (video_id, n_det)) in jobs.iter().zip(summary) {
        let mine: Vec<GroundTruthTrack> = tracks.iter().filter(|t| t.video_id == video_id).cloned().collect();
        write_mot(&j.out, &rows_from_tracks(&mine)).with_context(|| format!("track: writing {}", j.out.display()))?;
        videos.push(json!({
            "video_id": video_id,
            "detections": n_det,
            "tracks": mine.len(),
            "boxes": mine.iter().map(|t| t.boxes.len()).sum::<usize>(),
        }));
    }
    if let Some(p) = &c.report {
        let result = json!({ "videos": videos });
        emit(Some(p), &to_json(&envelope("track", ctx.seed, &c, result))?)?;
    }
    Ok(())
}

fn load_tracks(path: &Path, video_id: &str) -> anyhow::Result<Vec<GroundTruthTrack>> {
    let rows = read_mot(path).with_context(|| format!("mot-eval: reading {}", path.display()))?;
    tracks_from_rows(video_id, &rows).with_context(|| format!("mot-eval: {}", path.display()))
}

pub fn eval(args: &MotEvalArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.mot_eval.clone();
    args.apply(&mut c);
    ensure(c.match_iou > 0.0 && c.match_iou <= 1.0, || {
        "match_iou must lie in (0, 1]".into()
    })?;
    for m in &c.metrics {
        ensure(ALL_METRICS.contains(&m.as_str()), || {
            format!("unknown metric `{m}` (known: {})", ALL_METRICS.join(","))
        })?;
    }
    let gt_path = required(&c.gt, "gt")?;
    let pred_path = required(&c.pred, "pred")?;
    let (mut gt, mut pred) = (Vec::new(), Vec::new());
    if gt_path.is_dir() {
        for f in mot_files(gt_path)? {
            let video = stem(&f);
            gt.extend(load_tracks(&f, &video)?);
            let p = pred_path.join(format!("{video}.txt"));
            if p.is_file() {
                pred.extend(load_tracks(&p, &video)?);
            }
        }
    } else {
        let video = stem(gt_path);
        gt = load_tracks(gt_path, &video)?;
        pred = load_tracks(pred_path, &video)?;
    }
    let r = evaluate(&gt, &pred, c.match_iou);

    let all = serde_json::to_value(&r)?;
    let mut metrics = Map::new();
    for m in &c.metrics {
        metrics.insert(m.clone(), all[m.as_str()].clone());
    }
    if c.metrics.iter().any(|m| m == "idsw") {
        metrics.insert("idsw_per_video".into(), all["idsw_per_video"].clone());
    }
    let per_video: Vec<Value> = r
        .per_video
        .iter()
        .map(|v| {
            let v = serde_json::to_value(v).unwrap_or_default();
            let mut out = Map::new();
            out.insert("video_id".into(), v["video_id"].clone());
            for m in &c.metrics {
                if let Some(x) = v.get(m.as_str()) {
                    out.insert(m.clone(), x.clone());
                }
            }
            Value::Object(out)
        })
        .collect();
    let result = json!({ "videos": r.per_video.len(), "metrics": metrics, "per_video": per_video });
    emit(
        c.report.as_deref(),
        &to_json(&envelope("mot-eval", ctx.seed, &c, result))?,
    )
}
