//! Two-stage online tracker: Kalman motion, optional appearance, score-split association.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hungarian::assignment_pairs;
use super::iou;
use super::kalman::KalmanBox;
use crate::datamodel::mot::{BBox, DetectionRecord, GroundTruthTrack};
use crate::vecmath::{dot, normalized};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub high_thresh: f64,
    pub low_thresh: f64,
    /// Minimum IoU between predicted track box and detection for any match.
    pub iou_gate: f64,
    pub min_hits: u32,
    /// Confirmed tracks are dropped after more than this many consecutive misses.
    pub max_age: u32,
    pub lambda_app: f64,
    pub ema_momentum: f64,
    /// Optional score uplift `s + boost * max IoU with a predicted track`, capped at 1.
    pub boost: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            high_thresh: 0.6,
            low_thresh: 0.1,
            iou_gate: 0.3,
            min_hits: 3,
            max_age: 30,
            lambda_app: 0.25,
            ema_momentum: 0.9,
            boost: None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !(unit(self.low_thresh) && unit(self.high_thresh) && self.low_thresh <= self.high_thresh) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= low_thresh ({}) <= high_thresh ({}) <= 1",
                self.low_thresh, self.high_thresh
            )));
        }
        if !unit(self.lambda_app) || !unit(self.iou_gate) || !unit(self.ema_momentum) {
            return Err(Error::InvalidInput(
                "lambda_app, iou_gate and ema_momentum must lie in [0, 1]".into(),
            ));
        }
        if self.min_hits == 0 {
            return Err(Error::InvalidInput("min_hits must be >= 1".into()));
        }
        if self.boost.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
            return Err(Error::InvalidInput("boost must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    /// Confirmed but missed in the latest frame.
    Lost,
}

#[derive(Debug, Clone)]
pub struct TrackState {
    /// Output id, assigned on confirmation.
    pub track_id: Option<u64>,
    pub kf: KalmanBox,
    pub age: u32,
    pub hits: u32,
    pub time_since_update: u32,
    pub appearance: Option<Vec<f64>>,
    pub status: TrackStatus,
    history: Vec<(u32, BBox)>,
}

impl TrackState {
    fn new(frame: u32, det: &Detection) -> Self {
        let kf = KalmanBox::new(&det.bbox);
        TrackState {
            track_id: None,
            history: vec![(frame, kf.bbox())],
            kf,
            age: 0,
            hits: 1,
            time_since_update: 0,
            appearance: det.embedding.clone(),
            status: TrackStatus::Tentative,
        }
    }

    pub fn predicted_box(&self) -> BBox {
        self.kf.bbox()
    }

    fn update(&mut self, frame: u32, det: &Detection, momentum: f64) {
        self.kf.update(&det.bbox);
        self.hits += 1;
        self.time_since_update = 0;
        if self.status == TrackStatus::Lost {
            self.status = TrackStatus::Confirmed;
        }
        if let Some(e) = &det.embedding {
            self.appearance = Some(match self.appearance.take() {
                Some(a) => {
                    let mixed: Vec<f64> = a
                        .iter()
                        .zip(e)
                        .map(|(x, y)| momentum * x + (1.0 - momentum) * y)
                        .collect();
                    normalized(&mixed).unwrap_or_else(|_| e.clone())
                }
                None => e.clone(),
            });
        }
        self.history.push((frame, self.kf.bbox()));
    }
}

/// A detection as seen by the association step; the embedding is unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Association {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    /// High-score detections left over; each spawns a tentative track.
    pub new_tracks: Vec<usize>,
}

fn pair_cost(track: &TrackState, det: &Detection, lambda_app: f64, gate: f64) -> f64 {
    let overlap = iou(&track.predicted_box(), &det.bbox);
    if overlap < gate {
        return f64::INFINITY;
    }
    match (&track.appearance, &det.embedding) {
        (Some(a), Some(e)) if lambda_app > 0.0 => lambda_app * (1.0 - dot(a, e)) + (1.0 - lambda_app) * (1.0 - overlap),
        _ => 1.0 - overlap,
    }
}

fn match_stage(
    tracks: &[TrackState],
    dets: &[Detection],
    track_idx: &[usize],
    det_idx: &[usize],
    lambda_app: f64,
    gate: f64,
) -> Vec<(usize, usize)> {
    if track_idx.is_empty() || det_idx.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = track_idx
        .iter()
        .map(|&t| {
            det_idx
                .iter()
                .map(|&d| pair_cost(&tracks[t], &dets[d], lambda_app, gate))
                .collect()
        })
        .collect();
    assignment_pairs(&cost)
        .into_iter()
        .map(|(r, c)| (track_idx[r], det_idx[c]))
        .collect()
}

/// Tracks must already be predicted to the current frame.
///
/// Stage 1 matches confirmed and lost tracks to high-score detections with the blended
/// cost; tentative tracks then compete for the high-score leftovers with the same cost.
/// Stage 2 matches remaining confirmed and lost tracks to low-score detections by IoU only.
pub fn associate_two_stage(tracks: &[TrackState], dets: &[Detection], cfg: &TrackerConfig) -> Association {
    let high: Vec<usize> = (0..dets.len()).filter(|&d| dets[d].score >= cfg.high_thresh).collect();
    let low: Vec<usize> = (0..dets.len())
        .filter(|&d| dets[d].score >= cfg.low_thresh && dets[d].score < cfg.high_thresh)
        .collect();
    let established: Vec<usize> = (0..tracks.len())
        .filter(|&t| tracks[t].status != TrackStatus::Tentative)
        .collect();
    let tentative: Vec<usize> = (0..tracks.len())
        .filter(|&t| tracks[t].status == TrackStatus::Tentative)
        .collect();

    let mut det_used = vec![false; dets.len()];
    let mut track_used = vec![false; tracks.len()];
    let mut matches = match_stage(tracks, dets, &established, &high, cfg.lambda_app, cfg.iou_gate);
    for &(t, d) in &matches {
        track_used[t] = true;
        det_used[d] = true;
    }

    let high_left: Vec<usize> = high.iter().copied().filter(|&d| !det_used[d]).collect();
    for (t, d) in match_stage(tracks, dets, &tentative, &high_left, cfg.lambda_app, cfg.iou_gate) {
        track_used[t] = true;
        det_used[d] = true;
        matches.push((t, d));
    }

    let established_left: Vec<usize> = established.iter().copied().filter(|&t| !track_used[t]).collect();
    for (t, d) in match_stage(tracks, dets, &established_left, &low, 0.0, cfg.iou_gate) {
        track_used[t] = true;
        det_used[d] = true;
        matches.push((t, d));
    }

    matches.sort_unstable();
    Association {
        matches,
        unmatched_tracks: (0..tracks.len()).filter(|&t| !track_used[t]).collect(),
        new_tracks: high.into_iter().filter(|&d| !det_used[d]).collect(),
    }
}

/// Per-video tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
    finished: Vec<TrackState>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Tracker {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            finished: Vec::new(),
        })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    pub fn step(&mut self, frame: u32, dets: &[Detection]) {
        for t in &mut self.tracks {
            t.kf.predict();
            t.age += 1;
        }
        let boosted;
        let dets = match self.cfg.boost {
            Some(beta) if !self.tracks.is_empty() => {
                boosted = dets
                    .iter()
                    .map(|d| {
                        let best = self
                            .tracks
                            .iter()
                            .map(|t| iou(&t.predicted_box(), &d.bbox))
                            .fold(0.0, f64::max);
                        Detection {
                            score: (d.score + beta * best).min(1.0),
                            ..d.clone()
                        }
                    })
                    .collect::<Vec<_>>();
                &boosted[..]
            }
            _ => dets,
        };

        let assoc = associate_two_stage(&self.tracks, dets, &self.cfg);
        for &(t, d) in &assoc.matches {
            self.tracks[t].update(frame, &dets[d], self.cfg.ema_momentum);
        }
        for &t in &assoc.unmatched_tracks {
            let tr = &mut self.tracks[t];
            tr.time_since_update += 1;
            tr.hits = 0;
            if tr.status == TrackStatus::Confirmed {
                tr.status = TrackStatus::Lost;
            }
        }
        for tr in &mut self.tracks {
            if tr.status == TrackStatus::Tentative && tr.time_since_update == 0 && tr.hits >= self.cfg.min_hits {
                tr.status = TrackStatus::Confirmed;
                tr.track_id = Some(self.next_id);
                self.next_id += 1;
            }
        }
        let max_age = self.cfg.max_age;
        let (keep, gone): (Vec<TrackState>, Vec<TrackState>) =
            std::mem::take(&mut self.tracks)
                .into_iter()
                .partition(|t| match t.status {
                    TrackStatus::Tentative => t.time_since_update == 0,
                    _ => t.time_since_update <= max_age,
                });
        self.tracks = keep;
        self.finished.extend(gone.into_iter().filter(|t| t.track_id.is_some()));
        for &d in &assoc.new_tracks {
            let mut t = TrackState::new(frame, &dets[d]);
            if self.cfg.min_hits <= 1 {
                t.status = TrackStatus::Confirmed;
                t.track_id = Some(self.next_id);
                self.next_id += 1;
            }
            self.tracks.push(t);
        }
    }

    /// Every confirmed track, with one box per frame in which it was matched.
    pub fn finish(mut self, video_id: &str) -> Vec<GroundTruthTrack> {
        self.finished
            .extend(self.tracks.into_iter().filter(|t| t.track_id.is_some()));
        let mut out: Vec<GroundTruthTrack> = self
            .finished
            .into_iter()
            .map(|t| GroundTruthTrack {
                video_id: video_id.to_string(),
                gt_track_id: t.track_id.expect("confirmed") as i64,
                boxes: t.history.into_iter().collect(),
            })
            .collect();
        out.sort_by_key(|t| t.gt_track_id);
        out
    }
}

fn to_detection(d: &DetectionRecord) -> Result<Detection> {
    let embedding = match &d.embedding {
        Some(e) => Some(normalized(e)?),
        None => None,
    };
    Ok(Detection {
        bbox: d.bbox,
        score: d.score,
        embedding,
    })
}

/// Tracks one video. Every integer frame between the first and last detection is stepped.
pub fn track_video(video_id: &str, dets: &[&DetectionRecord], cfg: &TrackerConfig) -> Result<Vec<GroundTruthTrack>> {
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut by_frame: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        if !d.bbox.is_valid() {
            return Err(Error::InvalidInput(format!(
                "invalid box at frame {} of {video_id}",
                d.frame_index
            )));
        }
        by_frame.entry(d.frame_index).or_default().push(to_detection(d)?);
    }
    let (Some(&first), Some(&last)) = (by_frame.keys().next(), by_frame.keys().next_back()) else {
        return Ok(Vec::new());
    };
    for frame in first..=last {
        tracker.step(frame, by_frame.get(&frame).map(Vec::as_slice).unwrap_or(&[]));
    }
    Ok(tracker.finish(video_id))
}

/// Tracks every video independently (in parallel); output ordered by video id.
pub fn run_tracker(dets: &[DetectionRecord], cfg: &TrackerConfig) -> Result<Vec<GroundTruthTrack>> {
    cfg.validate()?;
    let mut videos: BTreeMap<&str, Vec<&DetectionRecord>> = BTreeMap::new();
    for d in dets {
        videos.entry(d.video_id.as_str()).or_default().push(d);
    }
    let per_video: Vec<Result<Vec<GroundTruthTrack>>> =
        videos.into_par_iter().map(|(v, ds)| track_video(v, &ds, cfg)).collect();
    let mut out = Vec::new();
    for r in per_video {
        out.extend(r?);
    }
    Ok(out)
}
