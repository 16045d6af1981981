//! Population counting: constrained and unconstrained clustering of tracklet embeddings.

pub mod census;
pub mod constraints;
pub mod dbscan;
pub mod hac;
pub mod hdbscan;
pub mod metrics;

use std::collections::BTreeMap;

pub use census::{run_census, Algorithm, CensusConfig, CensusResult, ClusterLabels, ClusterUnit};
pub use constraints::{derive_cannot_links, require_timestamps, CannotLinkSet, CannotLinks, ConstraintOrigin};
pub use dbscan::dbscan;
pub use hac::{hac, Dendrogram, Linkage, Merge, StopRule};
pub use hdbscan::hdbscan;
pub use metrics::{ami, ari, estimate_population};

use crate::datamodel::Manifest;
use crate::vecmath::normalized_mean;
use crate::{Error, Result};

/// Normalized mean embedding of every tracklet, keyed by tracklet id.
pub fn tracklet_embeddings(m: &Manifest) -> Result<BTreeMap<String, Vec<f64>>> {
    let by_tracklet = m.records_by_tracklet();
    m.tracklets
        .iter()
        .map(|t| {
            let records = by_tracklet
                .get(t.tracklet_id.as_str())
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let mean =
                normalized_mean(records.iter().map(|r| r.vector.as_slice()), m.embedding_dim).map_err(|e| match e {
                    Error::EmptyTracklet => Error::InvalidInput(format!("tracklet {} has no records", t.tracklet_id)),
                    other => other,
                })?;
            Ok((t.tracklet_id.clone(), mean))
        })
        .collect()
}
