//! Synthetic multi-object tracking streams.
//!
//! Objects move along piecewise-linear waypoints. Detections are derived from
//! the ground truth per frame, object by object, with scripted occlusion
//! windows, random dropout, box jitter and score noise. Every random draw is
//! made unconditionally, so toggling one effect never reshuffles the others.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{random_unit, stored_unit};
use crate::datamodel::mot::{BBox, DetectionRecord, GroundTruthTrack};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotObject {
    /// `(frame, cx, cy)`, strictly increasing in frame. The object exists from the
    /// first to the last waypoint.
    pub waypoints: Vec<(u32, f64, f64)>,
    pub w: f64,
    pub h: f64,
    /// Appearance direction; drawn at random when absent.
    #[serde(default)]
    pub appearance: Option<Vec<f64>>,
}

impl MotObject {
    pub fn first_frame(&self) -> u32 {
        self.waypoints[0].0
    }

    pub fn last_frame(&self) -> u32 {
        self.waypoints[self.waypoints.len() - 1].0
    }

    pub fn center_at(&self, frame: u32) -> Option<(f64, f64)> {
        if frame < self.first_frame() || frame > self.last_frame() {
            return None;
        }
        let i = self.waypoints.iter().rposition(|w| w.0 <= frame)?;
        let (f0, x0, y0) = self.waypoints[i];
        match self.waypoints.get(i + 1) {
            None => Some((x0, y0)),
            Some(&(f1, x1, y1)) => {
                let t = (frame - f0) as f64 / (f1 - f0) as f64;
                Some((x0 + t * (x1 - x0), y0 + t * (y1 - y0)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OcclusionMode {
    /// No detection at all.
    Drop,
    /// Detection kept with this score.
    LowScore { score: f64 },
}

/// Frames `start..=end` of object `object` are occluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occlusion {
    pub object: usize,
    pub start: u32,
    pub end: u32,
    #[serde(flatten)]
    pub mode: OcclusionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotSpec {
    pub video_id: String,
    pub objects: Vec<MotObject>,
    pub occlusions: Vec<Occlusion>,
    /// Probability that a visible detection is missed.
    pub dropout: f64,
    /// Box jitter as a fraction of box size (standard deviation).
    pub jitter: f64,
    pub score_mean: f64,
    pub score_noise: f64,
    /// Appearance embedding size; 0 emits detections without embeddings.
    pub embedding_dim: usize,
    pub appearance_noise: f64,
    pub seed: u64,
}

impl Default for MotSpec {
    fn default() -> Self {
        MotSpec {
            video_id: "vid0".into(),
            objects: Vec::new(),
            occlusions: Vec::new(),
            dropout: 0.0,
            jitter: 0.0,
            score_mean: 0.9,
            score_noise: 0.0,
            embedding_dim: 0,
            appearance_noise: 0.1,
            seed: 42,
        }
    }
}

impl MotSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        for (i, o) in self.objects.iter().enumerate() {
            if o.waypoints.is_empty() {
                return bad(format!("object {i} has no waypoints"));
            }
            if o.waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
                return bad(format!("object {i}: waypoint frames must strictly increase"));
            }
            if o.waypoints.iter().any(|w| !(w.1.is_finite() && w.2.is_finite()))
                || !(o.w > 0.0 && o.h > 0.0 && o.w.is_finite() && o.h.is_finite())
            {
                return bad(format!("object {i}: non-finite position or non-positive size"));
            }
            if let Some(a) = &o.appearance {
                if self.embedding_dim == 0 || a.len() != self.embedding_dim {
                    return bad(format!("object {i}: appearance length must equal embedding_dim"));
                }
            }
        }
        for occ in &self.occlusions {
            if occ.object >= self.objects.len() || occ.end < occ.start {
                return bad(format!("invalid occlusion window {occ:?}"));
            }
            if let OcclusionMode::LowScore { score } = occ.mode {
                if !(0.0..=1.0).contains(&score) {
                    return bad("occlusion score must lie in [0, 1]".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]".into());
        }
        for (name, v) in [
            ("jitter", self.jitter),
            ("score_noise", self.score_noise),
            ("appearance_noise", self.appearance_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.score_mean) {
            return bad("score_mean must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotScenario {
    /// One track per object, id = object index + 1.
    pub gt: Vec<GroundTruthTrack>,
    /// Sorted by frame, then object.
    pub detections: Vec<DetectionRecord>,
}

pub fn gen_mot_scenario(spec: &MotSpec) -> Result<MotScenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let appearances: Vec<Vec<f64>> = spec
        .objects
        .iter()
        .map(|o| match &o.appearance {
            Some(a) => crate::vecmath::normalized(a),
            None => Ok(random_unit(&mut rng, spec.embedding_dim.max(1))),
        })
        .collect::<Result<_>>()?;

    let mut gt: Vec<GroundTruthTrack> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, _)| GroundTruthTrack {
            video_id: spec.video_id.clone(),
            gt_track_id: i as i64 + 1,
            boxes: BTreeMap::new(),
        })
        .collect();
    let mut detections = Vec::new();
    let first = spec.objects.iter().map(MotObject::first_frame).min().unwrap_or(0);
    let last = spec.objects.iter().map(MotObject::last_frame).max().unwrap_or(0);
    let scale = (spec.embedding_dim.max(1) as f64).sqrt();

    for frame in first..=last {
        for (i, o) in spec.objects.iter().enumerate() {
            let Some((cx, cy)) = o.center_at(frame) else { continue };
            let truth = BBox::from_center(cx, cy, o.w, o.h);
            gt[i].boxes.insert(frame, truth);

            let missed = rng.random_bool(spec.dropout);
            let g: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let noise: Vec<f64> = (0..spec.embedding_dim).map(|_| rng.sample(StandardNormal)).collect();

            let occlusion = spec
                .occlusions
                .iter()
                .find(|w| w.object == i && (w.start..=w.end).contains(&frame));
            if missed
                || matches!(
                    occlusion,
                    Some(Occlusion {
                        mode: OcclusionMode::Drop,
                        ..
                    })
                )
            {
                continue;
            }
            let w = (o.w * (1.0 + spec.jitter * g[2])).max(0.1 * o.w);
            let h = (o.h * (1.0 + spec.jitter * g[3])).max(0.1 * o.h);
            let bbox = BBox::from_center(cx + spec.jitter * o.w * g[0], cy + spec.jitter * o.h * g[1], w, h);
            let score = match occlusion {
                Some(Occlusion {
                    mode: OcclusionMode::LowScore { score },
                    ..
                }) => *score,
                _ => (spec.score_mean + spec.score_noise * g[4]).clamp(0.01, 1.0),
            };
            let embedding = if spec.embedding_dim > 0 {
                let raw: Vec<f64> = appearances[i]
                    .iter()
                    .zip(&noise)
                    .map(|(a, n)| a + spec.appearance_noise * n / scale)
                    .collect();
                Some(stored_unit(&raw)?)
            } else {
                None
            };
            detections.push(DetectionRecord {
                video_id: spec.video_id.clone(),
                frame_index: frame,
                bbox,
                score,
                embedding,
            });
        }
    }
    Ok(MotScenario { gt, detections })
}

/// Two objects of identical size approach each other head-on, meet at frame 20,
/// and turn back. Both are hidden for frames 19 to 21. A motion-only tracker
/// extrapolates each track onto the other object; distinct appearance
/// embeddings (orthogonal directions) disambiguate.
pub fn crossing_scenario(seed: u64) -> MotSpec {
    let dim = 16;
    let axis = |k: usize| -> Vec<f64> { (0..dim).map(|d| if d == k { 1.0 } else { 0.0 }).collect() };
    let object = |x0: f64, k: usize| MotObject {
        waypoints: vec![(0, x0, 300.0), (20, 200.0, 300.0), (40, x0, 300.0)],
        w: 60.0,
        h: 120.0,
        appearance: Some(axis(k)),
    };
    MotSpec {
        video_id: "crossing".into(),
        objects: vec![object(160.0, 0), object(240.0, 1)],
        occlusions: (0..2)
            .map(|object| Occlusion {
                object,
                start: 19,
                end: 21,
                mode: OcclusionMode::Drop,
            })
            .collect(),
        embedding_dim: dim,
        appearance_noise: 0.05,
        seed,
        ..Default::default()
    }
}
