//! Synthetic re-identification manifests with known identities.
//!
//! Every embedding is built as
//!
//! ```text
//! v = c_id + drift * u_(id, encounter) + shared * s_encounter + sigma * g
//! ```
//!
//! then normalized, where `c`, `u` and `s` are random unit directions and `g` is Gaussian
//! with per-component variance `1 / dim` (so `|g|` is close to 1). The shared term models
//! lighting or background common to everything recorded in one encounter.
//!
//! With orthogonal-ish directions, two frames of the same identity in the same encounter
//! have cosine about `(1 + drift^2 + shared^2) / N`, the same identity across encounters
//! about `1 / N`, different identities in one encounter about `shared^2 / N`, where
//! `N = 1 + drift^2 + shared^2 + sigma^2`.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_unit, stored_unit};
use crate::datamodel::{EmbeddingRecord, Manifest, Split, TrackletMeta};
use crate::vecmath::dot;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReidSpec {
    pub dim: usize,
    /// Multi-encounter identities placed in `split`.
    pub identities: usize,
    pub encounters_per_identity: usize,
    pub tracklets_per_encounter: usize,
    pub frames_per_tracklet: usize,
    pub noise: f64,
    pub encounter_drift: f64,
    pub encounter_shared: f64,
    pub split: Split,
    /// Extra gallery-only identities with the same encounter structure.
    pub train_identities: usize,
    /// Gallery-only identities seen in exactly one encounter.
    pub distractors: usize,
    /// Number of social groups; identities are assigned round-robin. 0 disables groups.
    pub social_groups: usize,
    /// Whether group labels are written to the manifest.
    pub label_groups: bool,
    /// When set, each encounter records a whole social group in one video with
    /// overlapping frames, instead of one identity per encounter.
    pub co_occurrence: bool,
    /// Fraction of frames per tracklet replaced by random unit vectors.
    pub corrupt_fraction: f64,
    /// Pairs up encounters of different identities so they are recorded on the same
    /// day at overlapping times at two different sites.
    pub cross_location: bool,
    /// Upper bound on the cosine between any two identity centroids.
    pub max_centroid_cosine: Option<f64>,
    pub locations: usize,
    pub timestamps: bool,
    /// Wall-clock time between consecutive sampled frames.
    pub frame_interval_ms: i64,
    pub seed: u64,
}

impl Default for ReidSpec {
    fn default() -> Self {
        ReidSpec {
            dim: 64,
            identities: 16,
            encounters_per_identity: 4,
            tracklets_per_encounter: 1,
            frames_per_tracklet: 8,
            noise: 0.3,
            encounter_drift: 0.0,
            encounter_shared: 0.0,
            split: Split::Test,
            train_identities: 0,
            distractors: 0,
            social_groups: 0,
            label_groups: true,
            co_occurrence: false,
            corrupt_fraction: 0.0,
            cross_location: false,
            max_centroid_cosine: None,
            locations: 8,
            timestamps: true,
            frame_interval_ms: 40,
            seed: 42,
        }
    }
}

impl ReidSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.identities + self.train_identities + self.distractors < 2 {
            return bad("need at least 2 identities in total");
        }
        if (self.identities > 0 || self.train_identities > 0) && self.encounters_per_identity < 2 {
            return bad("multi-encounter identities need encounters_per_identity >= 2");
        }
        if self.tracklets_per_encounter == 0 || self.frames_per_tracklet == 0 {
            return bad("tracklets_per_encounter and frames_per_tracklet must be positive");
        }
        if !(0.0..1.0).contains(&self.corrupt_fraction) {
            return bad("corrupt_fraction must lie in [0, 1)");
        }
        for (name, v) in [
            ("noise", self.noise),
            ("encounter_drift", self.encounter_drift),
            ("encounter_shared", self.encounter_shared),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0")));
            }
        }
        if self.co_occurrence && self.social_groups == 0 {
            return bad("co_occurrence requires social_groups > 0");
        }
        if self.locations == 0 {
            return bad("locations must be positive");
        }
        if self.frame_interval_ms <= 0 {
            return bad("frame_interval_ms must be positive");
        }
        if self.cross_location && self.locations < 2 {
            return bad("cross_location requires at least 2 locations");
        }
        if self.max_centroid_cosine.is_some_and(|c| !(-1.0..=1.0).contains(&c)) {
            return bad("max_centroid_cosine must lie in [-1, 1]");
        }
        if matches!(self.split, Split::Distractor) {
            return bad("split must be train, val or test");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReidScenario {
    pub manifest: Manifest,
    /// Tracklet id to identity, for every tracklet.
    pub truth: BTreeMap<String, String>,
    pub centroids: BTreeMap<String, Vec<f64>>,
}

struct Identity {
    name: String,
    split: Split,
    group: Option<usize>,
    encounters: usize,
}

fn centroids(spec: &ReidSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    let limit = spec.max_centroid_cosine.unwrap_or(1.0);
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(Error::InvalidSpec(format!(
                "could not place {n} centroids with pairwise cosine <= {limit} in {} dimensions",
                spec.dim
            )));
        }
        let c = random_unit(rng, spec.dim);
        if out.iter().all(|o| dot(o, &c) <= limit) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Round-robin over runs of equal consecutive entries, so neighbours differ where possible.
fn interleave(plan: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut runs: Vec<Vec<Vec<usize>>> = Vec::new();
    for p in plan {
        match runs.last_mut() {
            Some(r) if r[0] == p => r.push(p),
            _ => runs.push(vec![p]),
        }
    }
    let mut out = Vec::new();
    let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..longest {
        for r in &runs {
            if let Some(p) = r.get(k) {
                out.push(p.clone());
            }
        }
    }
    out
}

pub fn gen_reid_scenario(spec: &ReidSpec) -> Result<ReidScenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut ids = Vec::new();
    for i in 0..spec.identities {
        ids.push(Identity {
            name: format!("id{i:03}"),
            split: spec.split,
            group: None,
            encounters: spec.encounters_per_identity,
        });
    }
    for i in 0..spec.train_identities {
        ids.push(Identity {
            name: format!("train{i:03}"),
            split: Split::Train,
            group: None,
            encounters: spec.encounters_per_identity,
        });
    }
    for i in 0..spec.distractors {
        ids.push(Identity {
            name: format!("distractor{i:03}"),
            split: Split::Distractor,
            group: None,
            encounters: 1,
        });
    }
    if spec.social_groups > 0 {
        let multi = spec.identities + spec.train_identities;
        for (i, id) in ids.iter_mut().take(multi).enumerate() {
            id.group = Some(i % spec.social_groups);
        }
    }
    let cents = centroids(spec, ids.len(), &mut rng)?;

    // Encounter plan: each entry lists the identities recorded together.
    let mut plan: Vec<Vec<usize>> = Vec::new();
    if spec.co_occurrence {
        for g in 0..spec.social_groups {
            for split in [spec.split, Split::Train] {
                let members: Vec<usize> = (0..ids.len())
                    .filter(|&i| ids[i].group == Some(g) && ids[i].split == split)
                    .collect();
                if !members.is_empty() {
                    for _ in 0..spec.encounters_per_identity {
                        plan.push(members.clone());
                    }
                }
            }
        }
        for (i, id) in ids.iter().enumerate() {
            if id.group.is_none() {
                for _ in 0..id.encounters {
                    plan.push(vec![i]);
                }
            }
        }
    } else {
        for (i, id) in ids.iter().enumerate() {
            for _ in 0..id.encounters {
                plan.push(vec![i]);
            }
        }
    }

    if spec.cross_location {
        plan = interleave(plan);
    }
    // Encounter slot: (day offset, hour). Paired slots share both.
    let mut slots: Vec<(i64, u32)> = Vec::with_capacity(plan.len());
    let mut day = 0i64;
    let mut e = 0;
    while e < plan.len() {
        let hour = 6 + (day % 12) as u32;
        slots.push((day, hour));
        if spec.cross_location && e + 1 < plan.len() && plan[e].iter().all(|i| !plan[e + 1].contains(i)) {
            slots.push((day, hour));
            e += 1;
        }
        e += 1;
        day += 1;
    }

    let base = NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date");
    let mut m = Manifest::new(spec.dim);
    let mut truth = BTreeMap::new();
    let mut record_id = 1u64;
    let mut tracklet_no = 0usize;
    let frames = spec.frames_per_tracklet;
    let n_corrupt = (spec.corrupt_fraction * frames as f64).round() as usize;

    for (e, members) in plan.iter().enumerate() {
        let (day, hour) = slots[e];
        let date = base + Duration::days(day);
        let location = format!("site{:02}", e % spec.locations);
        let video = format!("vid{e:05}");
        let start_clock = date.and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("valid time"));
        let shared = random_unit(&mut rng, spec.dim);
        for &i in members {
            let drift = random_unit(&mut rng, spec.dim);
            for k in 0..spec.tracklets_per_encounter {
                let tid = format!("t{tracklet_no:06}");
                tracklet_no += 1;
                let first = (k * frames) as u32;
                let last = first + frames as u32 - 1;
                let mut corrupt: Vec<bool> = (0..frames).map(|f| f < n_corrupt).collect();
                corrupt.shuffle(&mut rng);
                for (f, &bad) in corrupt.iter().enumerate() {
                    let vector = if bad {
                        stored_unit(&random_unit(&mut rng, spec.dim))?
                    } else {
                        let raw: Vec<f64> = (0..spec.dim)
                            .map(|d| {
                                let g: f64 = rng.sample(rand_distr::StandardNormal);
                                cents[i][d]
                                    + spec.encounter_drift * drift[d]
                                    + spec.encounter_shared * shared[d]
                                    + spec.noise * g / (spec.dim as f64).sqrt()
                            })
                            .collect();
                        stored_unit(&raw)?
                    };
                    m.records.push(EmbeddingRecord {
                        record_id,
                        tracklet_id: tid.clone(),
                        frame_index: first + f as u32,
                        vector,
                        confidence: Some(rng.random_range(0.5..1.0)),
                        crop_size: Some((224, 224)),
                    });
                    record_id += 1;
                }
                let (start_time, end_time) = if spec.timestamps {
                    (
                        Some(start_clock + Duration::milliseconds(first as i64 * spec.frame_interval_ms)),
                        Some(start_clock + Duration::milliseconds(last as i64 * spec.frame_interval_ms)),
                    )
                } else {
                    (None, None)
                };
                m.tracklets.push(TrackletMeta {
                    tracklet_id: tid.clone(),
                    video_id: video.clone(),
                    location_id: location.clone(),
                    date,
                    start_time,
                    end_time,
                    start_frame: first,
                    end_frame: last,
                    identity: Some(ids[i].name.clone()),
                    social_group: ids[i]
                        .group
                        .filter(|_| spec.label_groups)
                        .map(|g| format!("group{g:02}")),
                    split: ids[i].split,
                });
                truth.insert(tid, ids[i].name.clone());
            }
        }
    }
    m.sort_records();
    Ok(ReidScenario {
        manifest: m,
        truth,
        centroids: ids.iter().map(|i| i.name.clone()).zip(cents).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::validate_manifest;
    use crate::retrieval::{balanced_top1, build_gallery, eval_probes};

    #[test]
    fn valid_and_reproducible() {
        let spec = ReidSpec {
            distractors: 3,
            train_identities: 2,
            social_groups: 3,
            corrupt_fraction: 0.25,
            ..Default::default()
        };
        let a = gen_reid_scenario(&spec).unwrap();
        let b = gen_reid_scenario(&spec).unwrap();
        assert_eq!(a, b);
        assert!(validate_manifest(&a.manifest, None).is_valid());
        assert_eq!(a.manifest.tracklets.len(), 16 * 4 + 2 * 4 + 3);
        let other = gen_reid_scenario(&ReidSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.manifest.records[0].vector, other.manifest.records[0].vector);
    }

    #[test]
    fn noiseless_pair_is_perfect() {
        let spec = ReidSpec {
            identities: 2,
            noise: 0.0,
            ..Default::default()
        };
        let s = gen_reid_scenario(&spec).unwrap();
        let g = build_gallery(&s.manifest, Split::Test).unwrap();
        let probes = eval_probes(&s.manifest, Split::Test);
        assert_eq!(balanced_top1(&g, &probes, 5).unwrap(), 1.0);
    }

    #[test]
    fn co_occurring_groups_share_videos() {
        let spec = ReidSpec {
            identities: 8,
            social_groups: 2,
            co_occurrence: true,
            encounters_per_identity: 3,
            ..Default::default()
        };
        let s = gen_reid_scenario(&spec).unwrap();
        assert!(validate_manifest(&s.manifest, None).is_valid());
        let mut by_video: BTreeMap<&str, Vec<&TrackletMeta>> = BTreeMap::new();
        for t in &s.manifest.tracklets {
            by_video.entry(&t.video_id).or_default().push(t);
        }
        assert_eq!(by_video.len(), 6);
        for ts in by_video.values() {
            assert_eq!(ts.len(), 4);
            assert!(ts.iter().all(|t| t.social_group == ts[0].social_group));
        }
    }

    #[test]
    fn cross_location_pairs_induce_location_links() {
        use crate::clustering::constraints::DEFAULT_SKEW_TOLERANCE_SECS;
        use crate::clustering::{derive_cannot_links, ConstraintOrigin};
        let spec = ReidSpec {
            identities: 4,
            cross_location: true,
            // Two-minute sampling keeps each tracklet longer than the skew tolerance.
            frame_interval_ms: 120_000,
            ..Default::default()
        };
        let s = gen_reid_scenario(&spec).unwrap();
        assert!(validate_manifest(&s.manifest, None).is_valid());
        let links = derive_cannot_links(&s.manifest.tracklets, Duration::seconds(DEFAULT_SKEW_TOLERANCE_SECS));
        let by_loc = links.count_by_origin();
        assert_eq!(by_loc.get(&ConstraintOrigin::Location).copied(), Some(8));
        for (a, b, _) in links.iter() {
            assert_ne!(s.truth[a], s.truth[b]);
        }
    }

    #[test]
    fn centroid_bound_enforced() {
        let spec = ReidSpec {
            dim: 4,
            identities: 6,
            max_centroid_cosine: Some(0.6),
            ..Default::default()
        };
        let s = gen_reid_scenario(&spec).unwrap();
        let c: Vec<&Vec<f64>> = s.centroids.values().collect();
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert!(dot(c[i], c[j]) <= 0.6);
            }
        }
        let impossible = ReidSpec {
            dim: 2,
            identities: 8,
            max_centroid_cosine: Some(-0.5),
            ..Default::default()
        };
        assert!(matches!(gen_reid_scenario(&impossible), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(gen_reid_scenario(&ReidSpec {
            identities: 1,
            ..Default::default()
        })
        .is_err());
        assert!(gen_reid_scenario(&ReidSpec {
            encounters_per_identity: 1,
            ..Default::default()
        })
        .is_err());
        assert!(gen_reid_scenario(&ReidSpec {
            corrupt_fraction: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}
