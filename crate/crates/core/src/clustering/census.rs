//! End-to-end population census over a manifest.

use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use super::constraints::{
    derive_cannot_links, require_timestamps, CannotLinks, ConstraintOrigin, DEFAULT_SKEW_TOLERANCE_SECS,
};
use super::dbscan::{dbscan, DEFAULT_EPS, DEFAULT_MIN_PTS};
use super::hac::{hac, Dendrogram, Linkage, StopRule, DEFAULT_DISTANCE_THRESHOLD};
use super::hdbscan::{hdbscan, DEFAULT_MIN_CLUSTER_SIZE};
use super::metrics::{ami, ari, estimate_population};
use super::tracklet_embeddings;
use crate::datamodel::{Manifest, Split, TrackletMeta};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterUnit {
    /// One point per tracklet (its normalized mean embedding).
    #[default]
    Tracklet,
    /// One point per embedding record; constraints are inherited from the tracklets.
    Frame,
}

impl std::fmt::Display for ClusterUnit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClusterUnit::Tracklet => "tracklet",
            ClusterUnit::Frame => "frame",
        })
    }
}

impl std::str::FromStr for ClusterUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tracklet" => Ok(ClusterUnit::Tracklet),
            "frame" => Ok(ClusterUnit::Frame),
            other => Err(Error::InvalidInput(format!("unknown clustering unit '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Algorithm {
    Hac {
        linkage: Linkage,
        stop: StopRule,
    },
    Dbscan {
        eps: f64,
        min_pts: usize,
    },
    Hdbscan {
        min_cluster_size: usize,
        min_samples: Option<usize>,
    },
}

impl Algorithm {
    pub fn default_hac() -> Self {
        Algorithm::Hac {
            linkage: Linkage::Average,
            stop: StopRule::Threshold(DEFAULT_DISTANCE_THRESHOLD),
        }
    }

    pub fn default_dbscan() -> Self {
        Algorithm::Dbscan {
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
        }
    }

    pub fn default_hdbscan() -> Self {
        Algorithm::Hdbscan {
            min_cluster_size: DEFAULT_MIN_CLUSTER_SIZE,
            min_samples: None,
        }
    }
}

impl Default for Algorithm {
    fn default() -> Self {
        Self::default_hac()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusConfig {
    pub unit: ClusterUnit,
    pub algorithm: Algorithm,
    pub constrained: bool,
    pub skew_tolerance_secs: i64,
    /// Restrict to tracklets in these splits; `None` keeps every tracklet.
    pub splits: Option<Vec<Split>>,
    /// Run constrained even if some tracklets lack wall-clock timestamps,
    /// silently weakening the simultaneity rule.
    pub allow_missing_timestamps: bool,
}

impl Default for CensusConfig {
    fn default() -> Self {
        CensusConfig {
            unit: ClusterUnit::Tracklet,
            algorithm: Algorithm::default(),
            constrained: false,
            skew_tolerance_secs: DEFAULT_SKEW_TOLERANCE_SECS,
            splits: None,
            allow_missing_timestamps: false,
        }
    }
}

/// Item ids (tracklet ids or record ids) with their cluster label; `-1` is noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub ids: Vec<String>,
    pub labels: Vec<i64>,
}

impl ClusterLabels {
    pub fn get(&self, id: &str) -> Option<i64> {
        self.ids.iter().position(|x| x == id).map(|i| self.labels[i])
    }

    pub fn population(&self) -> usize {
        estimate_population(&self.labels)
    }

    /// Members of each non-noise cluster, in label order.
    pub fn clusters(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.population()];
        for (id, &l) in self.ids.iter().zip(&self.labels) {
            if l >= 0 {
                out[l as usize].push(id.clone());
            }
        }
        out
    }

    pub fn noise(&self) -> Vec<String> {
        self.ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l < 0)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusResult {
    pub unit: ClusterUnit,
    pub n_items: usize,
    pub population: usize,
    pub n_noise: usize,
    /// Present when at least one item has a known identity; noise counts as its own label.
    pub ari: Option<f64>,
    pub ami: Option<f64>,
    pub true_population: Option<usize>,
    /// Cannot-link pairs among the selected tracklets, by originating rule.
    pub constraint_pairs: BTreeMap<ConstraintOrigin, usize>,
    /// Cannot-link tracklet pairs whose items share a cluster. Always audited,
    /// also for unconstrained runs, where it is informative rather than a failure.
    pub violations: Vec<(String, String)>,
    pub labels: ClusterLabels,
    pub dendrogram: Option<Dendrogram>,
}

struct Items {
    ids: Vec<String>,
    points: Vec<Vec<f64>>,
    tracklet_of: Vec<usize>,
}

fn items(m: &Manifest, tracklets: &[&TrackletMeta], unit: ClusterUnit) -> Result<Items> {
    match unit {
        ClusterUnit::Tracklet => {
            let mut emb = tracklet_embeddings(m)?;
            let points = tracklets
                .iter()
                .map(|t| emb.remove(&t.tracklet_id).expect("embedding per tracklet"))
                .collect();
            Ok(Items {
                ids: tracklets.iter().map(|t| t.tracklet_id.clone()).collect(),
                points,
                tracklet_of: (0..tracklets.len()).collect(),
            })
        }
        ClusterUnit::Frame => {
            let by_tracklet = m.records_by_tracklet();
            let mut out = Items {
                ids: Vec::new(),
                points: Vec::new(),
                tracklet_of: Vec::new(),
            };
            for (ti, t) in tracklets.iter().enumerate() {
                for r in by_tracklet.get(t.tracklet_id.as_str()).into_iter().flatten() {
                    out.ids.push(r.record_id.to_string());
                    out.points.push(r.vector.clone());
                    out.tracklet_of.push(ti);
                }
            }
            Ok(out)
        }
    }
}

pub fn run_census(m: &Manifest, cfg: &CensusConfig) -> Result<CensusResult> {
    let mut tracklets: Vec<&TrackletMeta> = m
        .tracklets
        .iter()
        .filter(|t| cfg.splits.as_ref().is_none_or(|s| s.contains(&t.split)))
        .collect();
    tracklets.sort_by(|a, b| a.tracklet_id.cmp(&b.tracklet_id));
    if tracklets.is_empty() {
        return Err(Error::InvalidInput("no tracklets selected for clustering".into()));
    }
    let owned: Vec<TrackletMeta> = tracklets.iter().map(|t| (*t).clone()).collect();
    if cfg.constrained && !cfg.allow_missing_timestamps {
        require_timestamps(&owned)?;
    }
    let set = derive_cannot_links(&owned, Duration::seconds(cfg.skew_tolerance_secs));
    let tracklet_ids: Vec<String> = owned.iter().map(|t| t.tracklet_id.clone()).collect();
    let tracklet_links = set.index(&tracklet_ids);

    let it = items(m, &tracklets, cfg.unit)?;
    let n = it.ids.len();
    let item_links = match cfg.unit {
        ClusterUnit::Tracklet => tracklet_links.clone(),
        ClusterUnit::Frame => {
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); tracklets.len()];
            for (i, &t) in it.tracklet_of.iter().enumerate() {
                members[t].push(i);
            }
            let mut pairs = Vec::new();
            for a in 0..tracklets.len() {
                for &b in tracklet_links.partners(a) {
                    if a < b {
                        for &x in &members[a] {
                            pairs.extend(members[b].iter().map(|&y| (x, y)));
                        }
                    }
                }
            }
            CannotLinks::from_pairs(n, pairs)
        }
    };
    let constraints = cfg.constrained.then_some(&item_links);

    let (labels, dendrogram) = match &cfg.algorithm {
        Algorithm::Hac { linkage, stop } => {
            let (l, d) = hac(&it.points, *linkage, *stop, constraints)?;
            (l, Some(d))
        }
        Algorithm::Dbscan { eps, min_pts } => (dbscan(&it.points, *eps, *min_pts, constraints)?, None),
        Algorithm::Hdbscan {
            min_cluster_size,
            min_samples,
        } => (hdbscan(&it.points, *min_cluster_size, *min_samples, constraints)?, None),
    };

    let mut violations: Vec<(String, String)> = item_links
        .violations(&labels)
        .into_iter()
        .map(|(a, b)| {
            let (ta, tb) = (&tracklet_ids[it.tracklet_of[a]], &tracklet_ids[it.tracklet_of[b]]);
            if ta <= tb {
                (ta.clone(), tb.clone())
            } else {
                (tb.clone(), ta.clone())
            }
        })
        .collect();
    violations.sort();
    violations.dedup();

    let mut truth_ids: BTreeMap<&str, i64> = BTreeMap::new();
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (i, &t) in it.tracklet_of.iter().enumerate() {
        if let Some(id) = &tracklets[t].identity {
            let next = truth_ids.len() as i64;
            truth.push(*truth_ids.entry(id.as_str()).or_insert(next));
            pred.push(labels[i]);
        }
    }
    let (ari_v, ami_v, true_pop) = if truth.is_empty() {
        (None, None, None)
    } else {
        (
            Some(ari(&pred, &truth)?),
            Some(ami(&pred, &truth)?),
            Some(truth_ids.len()),
        )
    };

    let labels = ClusterLabels { ids: it.ids, labels };
    Ok(CensusResult {
        unit: cfg.unit,
        n_items: n,
        population: labels.population(),
        n_noise: labels.labels.iter().filter(|&&l| l < 0).count(),
        ari: ari_v,
        ami: ami_v,
        true_population: true_pop,
        constraint_pairs: set.count_by_origin(),
        violations,
        labels,
        dendrogram,
    })
}
