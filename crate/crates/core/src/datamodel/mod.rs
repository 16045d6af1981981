//! In-memory representation of embeddings, tracklets and encounters.
//!
//! A [`Manifest`] is the unit of exchange: one embedding stream plus the
//! tracklet metadata that drives evaluation splits and clustering
//! constraints. See [`io`] for the on-disk layout and [`mot`] for the MOT
//! Challenge text format used by tracking.

pub mod io;
pub mod mot;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::vecmath::{norm, UNIT_NORM_TOLERANCE};

pub use io::{load_manifest, read_manifest_unvalidated, save_manifest, VectorStorage};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    /// Single-encounter individuals: gallery only, never probes.
    Distractor,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Distractor => "distractor",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "distractor" => Ok(Split::Distractor),
            other => Err(crate::Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub record_id: u64,
    pub tracklet_id: String,
    pub frame_index: u32,
    /// Unit length after ingestion; every component is exactly representable as f32.
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Crop size in pixels `(width, height)`, when the producer recorded it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_size: Option<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackletMeta {
    pub tracklet_id: String,
    pub video_id: String,
    pub location_id: String,
    /// Recording day as labelled at the camera; no timezone arithmetic.
    pub date: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<NaiveDateTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<NaiveDateTime>,
    pub start_frame: u32,
    pub end_frame: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub social_group: Option<String>,
    pub split: Split,
}

/// All recordings at one camera location within one calendar day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EncounterKey {
    pub location_id: String,
    pub date: NaiveDate,
}

impl fmt::Display for EncounterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.location_id, self.date)
    }
}

pub fn encounter_of(t: &TrackletMeta) -> EncounterKey {
    EncounterKey {
        location_id: t.location_id.clone(),
        date: t.date,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub schema_version: u32,
    pub embedding_dim: usize,
    pub records: Vec<EmbeddingRecord>,
    pub tracklets: Vec<TrackletMeta>,
}

impl Manifest {
    pub fn new(embedding_dim: usize) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            embedding_dim,
            records: Vec::new(),
            tracklets: Vec::new(),
        }
    }

    pub fn tracklet_index(&self) -> BTreeMap<&str, &TrackletMeta> {
        self.tracklets.iter().map(|t| (t.tracklet_id.as_str(), t)).collect()
    }

    pub fn tracklet(&self, id: &str) -> Option<&TrackletMeta> {
        self.tracklets.iter().find(|t| t.tracklet_id == id)
    }

    /// Records grouped by tracklet, in tracklet-id order.
    pub fn records_by_tracklet(&self) -> BTreeMap<&str, Vec<&EmbeddingRecord>> {
        let mut out: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
        for r in &self.records {
            out.entry(r.tracklet_id.as_str()).or_default().push(r);
        }
        out
    }

    pub fn sort_records(&mut self) {
        self.records
            .sort_by(|a, b| (a.tracklet_id.as_str(), a.frame_index).cmp(&(b.tracklet_id.as_str(), b.frame_index)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateKey,
    DuplicateRecordId,
    DuplicateTracklet,
    MissingTracklet,
    DimensionMismatch,
    NonFiniteValue,
    NotUnitNorm,
    FrameOutOfRange,
    InvalidInterval,
    ConfidenceOutOfRange,
    SizeFilter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    fn push(&mut self, kind: ViolationKind, detail: String) {
        self.violations.push(Violation { kind, detail });
    }
}

/// Checks every manifest invariant and reports all violations found.
///
/// `min_crop` enables the crop-size filter for records that carry a crop size.
pub fn validate_manifest(m: &Manifest, min_crop: Option<u32>) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut tracklets: BTreeMap<&str, &TrackletMeta> = BTreeMap::new();
    for t in &m.tracklets {
        if tracklets.insert(t.tracklet_id.as_str(), t).is_some() {
            report.push(
                ViolationKind::DuplicateTracklet,
                format!("tracklet `{}` declared twice", t.tracklet_id),
            );
        }
        if t.start_frame > t.end_frame {
            report.push(
                ViolationKind::InvalidInterval,
                format!(
                    "tracklet `{}`: start_frame {} > end_frame {}",
                    t.tracklet_id, t.start_frame, t.end_frame
                ),
            );
        }
        if let (Some(s), Some(e)) = (t.start_time, t.end_time) {
            if s > e {
                report.push(
                    ViolationKind::InvalidInterval,
                    format!("tracklet `{}`: start_time after end_time", t.tracklet_id),
                );
            }
        }
    }

    let mut keys: HashSet<(&str, u32)> = HashSet::new();
    let mut ids: BTreeSet<u64> = BTreeSet::new();
    for r in &m.records {
        if !keys.insert((r.tracklet_id.as_str(), r.frame_index)) {
            report.push(
                ViolationKind::DuplicateKey,
                format!("({}, {}) appears twice", r.tracklet_id, r.frame_index),
            );
        }
        if !ids.insert(r.record_id) {
            report.push(
                ViolationKind::DuplicateRecordId,
                format!("record_id {} appears twice", r.record_id),
            );
        }
        match tracklets.get(r.tracklet_id.as_str()) {
            None => report.push(
                ViolationKind::MissingTracklet,
                format!("record {} -> `{}`", r.record_id, r.tracklet_id),
            ),
            Some(t) => {
                if r.frame_index < t.start_frame || r.frame_index > t.end_frame {
                    report.push(
                        ViolationKind::FrameOutOfRange,
                        format!(
                            "record {}: frame {} outside [{}, {}]",
                            r.record_id, r.frame_index, t.start_frame, t.end_frame
                        ),
                    );
                }
            }
        }
        if r.vector.len() != m.embedding_dim {
            report.push(
                ViolationKind::DimensionMismatch,
                format!(
                    "record {}: {} components, expected {}",
                    r.record_id,
                    r.vector.len(),
                    m.embedding_dim
                ),
            );
        } else if r.vector.iter().any(|x| !x.is_finite()) {
            report.push(ViolationKind::NonFiniteValue, format!("record {}", r.record_id));
        } else if (norm(&r.vector) - 1.0).abs() > UNIT_NORM_TOLERANCE {
            report.push(
                ViolationKind::NotUnitNorm,
                format!("record {}: norm {}", r.record_id, norm(&r.vector)),
            );
        }
        if let Some(c) = r.confidence {
            if !(0.0..=1.0).contains(&c) {
                report.push(
                    ViolationKind::ConfidenceOutOfRange,
                    format!("record {}: confidence {c}", r.record_id),
                );
            }
        }
        if let (Some(min), Some((w, h))) = (min_crop, r.crop_size) {
            if w < min || h < min {
                report.push(
                    ViolationKind::SizeFilter,
                    format!("record {}: crop {w}x{h} below {min}x{min}", r.record_id),
                );
            }
        }
    }
    report
}
