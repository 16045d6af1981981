//! One identity decision per tracklet.
//!
//! Three strategies collapse frame-level evidence: majority vote over
//! per-frame top-1 predictions, confidence-weighted vote, and a single
//! query with the tracklet's normalised mean embedding. Only the probe side
//! is aggregated; the gallery stays frame-level.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{encounter_of, EmbeddingRecord, EncounterKey, Manifest, Split};
use crate::retrieval::{knn_batch, knn_vector, macro_average, Gallery, Query, RetrievalResult, Top1Report};
use crate::vecmath::normalized_mean;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Majority,
    Confidence,
    #[serde(alias = "mean")]
    EmbeddingMean,
    /// Learned temporal aggregator; reserved, always [`Error::Unsupported`].
    Ptam,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Majority => "majority",
            Strategy::Confidence => "confidence",
            Strategy::EmbeddingMean => "mean",
            Strategy::Ptam => "ptam",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Strategy::Majority),
            "confidence" => Ok(Strategy::Confidence),
            "mean" | "embedding_mean" => Ok(Strategy::EmbeddingMean),
            "ptam" => Ok(Strategy::Ptam),
            other => Err(Error::InvalidInput(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletDecision {
    pub tracklet_id: String,
    pub identity: String,
    pub confidence: f64,
    pub strategy: Strategy,
}

/// Weighted vote: winner has the largest weight; ties go to the larger
/// summed frame confidence, then the lexicographically smaller identity.
/// Returns `(identity, weight share)`.
fn weighted_vote(frames: &[RetrievalResult], weight: impl Fn(&RetrievalResult) -> f64) -> (String, f64) {
    let mut tally: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for f in frames {
        let w = weight(f);
        total += w;
        let e = tally.entry(f.identity.as_str()).or_insert((0.0, 0.0));
        e.0 += w;
        e.1 += f.confidence;
    }
    let (id, (w, _)) = tally
        .into_iter()
        .fold(None::<(&str, (f64, f64))>, |best, (id, (w, c))| match best {
            Some((_, (bw, bc))) if w < bw || (w == bw && c <= bc) => best,
            _ => Some((id, (w, c))),
        })
        .expect("frames non-empty");
    let share = if total > 0.0 { (w / total).clamp(0.0, 1.0) } else { 0.0 };
    (id.to_string(), share)
}

pub fn aggregate_majority(tracklet_id: &str, frames: &[RetrievalResult]) -> Result<TrackletDecision> {
    if frames.is_empty() {
        return Err(Error::EmptyTracklet);
    }
    let (identity, confidence) = weighted_vote(frames, |_| 1.0);
    Ok(TrackletDecision {
        tracklet_id: tracklet_id.to_string(),
        identity,
        confidence,
        strategy: Strategy::Majority,
    })
}

pub fn aggregate_confidence(tracklet_id: &str, frames: &[RetrievalResult]) -> Result<TrackletDecision> {
    if frames.is_empty() {
        return Err(Error::EmptyTracklet);
    }
    let (identity, confidence) = weighted_vote(frames, |f| f.confidence);
    Ok(TrackletDecision {
        tracklet_id: tracklet_id.to_string(),
        identity,
        confidence,
        strategy: Strategy::Confidence,
    })
}

/// Queries the gallery once with the re-normalised mean of the frame vectors.
pub fn aggregate_embedding_mean(
    tracklet_id: &str,
    frames: &[&EmbeddingRecord],
    g: &Gallery,
    encounter: &EncounterKey,
    k: usize,
) -> Result<TrackletDecision> {
    let first = frames.first().ok_or(Error::EmptyTracklet)?;
    if frames.iter().any(|f| f.tracklet_id != first.tracklet_id) {
        return Err(Error::InvalidInput("frames span several tracklets".into()));
    }
    let mean = normalized_mean(frames.iter().map(|f| f.vector.as_slice()), g.dim())?;
    let res = knn_vector(g, first.record_id, &mean, encounter, k)?;
    Ok(TrackletDecision {
        tracklet_id: tracklet_id.to_string(),
        identity: res.identity,
        confidence: res.confidence,
        strategy: Strategy::EmbeddingMean,
    })
}

/// Tracklet-level evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackletEvaluation {
    pub report: Top1Report,
    pub decisions: Vec<TrackletDecision>,
}

/// Balanced Top-1 with one decision per eligible tracklet of `split`.
///
/// A tracklet is eligible when its identity appears in at least two
/// encounters within the split.
pub fn evaluate_tracklets(
    m: &Manifest,
    g: &Gallery,
    split: Split,
    strategy: Strategy,
    k: usize,
) -> Result<TrackletEvaluation> {
    if strategy == Strategy::Ptam {
        return Err(Error::Unsupported(
            "ptam aggregation needs a trained temporal model".into(),
        ));
    }
    let mut encounters: BTreeMap<&str, BTreeSet<EncounterKey>> = BTreeMap::new();
    for t in m.tracklets.iter().filter(|t| t.split == split) {
        if let Some(id) = &t.identity {
            encounters.entry(id).or_default().insert(encounter_of(t));
        }
    }
    let by_tracklet = m.records_by_tracklet();
    let jobs: Vec<(&str, &str, EncounterKey, &Vec<&EmbeddingRecord>)> = m
        .tracklets
        .iter()
        .filter(|t| t.split == split)
        .filter_map(|t| {
            let id = t.identity.as_deref()?;
            if encounters.get(id).is_none_or(|e| e.len() < 2) {
                return None;
            }
            let frames = by_tracklet.get(t.tracklet_id.as_str())?;
            Some((t.tracklet_id.as_str(), id, encounter_of(t), frames))
        })
        .collect();
    if jobs.is_empty() {
        return Err(Error::NoProbes);
    }

    let decisions: Vec<TrackletDecision> = jobs
        .par_iter()
        .map(|(tid, _, enc, frames)| decide(tid, frames, g, enc, strategy, k))
        .collect::<Result<_>>()?;
    let report = macro_average(
        jobs.iter()
            .zip(&decisions)
            .map(|((_, id, _, _), d)| (*id, d.identity == *id)),
    )?;
    Ok(TrackletEvaluation { report, decisions })
}

pub fn decide(
    tracklet_id: &str,
    frames: &[&EmbeddingRecord],
    g: &Gallery,
    encounter: &EncounterKey,
    strategy: Strategy,
    k: usize,
) -> Result<TrackletDecision> {
    match strategy {
        Strategy::EmbeddingMean => aggregate_embedding_mean(tracklet_id, frames, g, encounter, k),
        Strategy::Majority | Strategy::Confidence => {
            let queries: Vec<Query<'_>> = frames
                .iter()
                .map(|f| Query {
                    record_id: f.record_id,
                    vector: &f.vector,
                    encounter,
                })
                .collect();
            let results = knn_batch(g, &queries, k).into_iter().collect::<Result<Vec<_>>>()?;
            if strategy == Strategy::Majority {
                aggregate_majority(tracklet_id, &results)
            } else {
                aggregate_confidence(tracklet_id, &results)
            }
        }
        Strategy::Ptam => Err(Error::Unsupported(
            "ptam aggregation needs a trained temporal model".into(),
        )),
    }
}

/// Balanced tracklet-level Top-1 for `strategy`.
pub fn evaluate_tracklet_top1(m: &Manifest, g: &Gallery, split: Split, strategy: Strategy, k: usize) -> Result<f64> {
    evaluate_tracklets(m, g, split, strategy, k).map(|e| e.report.balanced_top1)
}
