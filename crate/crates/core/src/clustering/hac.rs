//! Greedy agglomerative clustering on cosine distance with optional cannot-link constraints.
//!
//! Cluster distances follow the Lance-Williams recurrences. Ward's recurrence is applied
//! to `1 - cos`, which equals half the squared Euclidean distance between unit vectors,
//! so merge heights are Ward's criterion on the raw (unnormalized) cluster centroids.
//! Centroids of unit vectors are not unit vectors, so this is not Ward on the sphere.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::constraints::CannotLinks;
use crate::vecmath::dot;
use crate::{Error, Result};

pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Ward,
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Ward => "ward",
        })
    }
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "ward" => Ok(Linkage::Ward),
            other => Err(Error::InvalidInput(format!("unknown linkage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Merge while the closest legal pair is at most this far apart.
    Threshold(f64),
    /// Merge until exactly this many clusters remain.
    Clusters(usize),
}

/// One agglomeration step. Leaves are `0..n`; the cluster formed by step `t` is `n + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub distance: f64,
    pub new_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Dense `n x n` cosine distance matrix, row-major.
pub fn pairwise_cosine_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    if n == 0 {
        return d;
    }
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = 1.0 - dot(&points[i], &points[j]);
            }
        }
    });
    d
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or(Error::InvalidInput("no points to cluster".into()))?;
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: "clustering input".into(),
            });
        }
    }
    Ok(dim)
}

pub(crate) fn check_constraints(n: usize, constraints: Option<&CannotLinks>) -> Result<()> {
    match constraints {
        Some(c) if c.n_items() != n => Err(Error::DomainMismatch(c.n_items(), n)),
        _ => Ok(()),
    }
}

/// Labels are assigned in order of each cluster's smallest member.
pub fn hac(
    points: &[Vec<f64>],
    linkage: Linkage,
    stop: StopRule,
    constraints: Option<&CannotLinks>,
) -> Result<(Vec<i64>, Dendrogram)> {
    check_points(points)?;
    check_constraints(points.len(), constraints)?;
    hac_from_distances(
        pairwise_cosine_distances(points),
        points.len(),
        linkage,
        stop,
        constraints,
    )
}

struct State {
    n: usize,
    dist: Vec<f64>,
    forbidden: Vec<bool>,
    active: Vec<bool>,
    size: Vec<usize>,
    node: Vec<usize>,
    nn: Vec<Option<(f64, usize)>>,
}

impl State {
    fn nearest(&self, i: usize) -> Option<(f64, usize)> {
        let row = &self.dist[i * self.n..(i + 1) * self.n];
        let forb = &self.forbidden[i * self.n..(i + 1) * self.n];
        let mut best: Option<(f64, usize)> = None;
        for j in 0..self.n {
            if j == i || !self.active[j] || forb[j] {
                continue;
            }
            // Ascending j already orders ties by (min, max) of the pair.
            if best.is_none_or(|(d, _)| row[j] < d) {
                best = Some((row[j], j));
            }
        }
        best
    }

    fn closest_pair(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.n {
            if !self.active[i] {
                continue;
            }
            if let Some((d, j)) = self.nn[i] {
                let key = (d, i.min(j), i.max(j));
                if best.is_none_or(|b| key.0 < b.0 || (key.0 == b.0 && (key.1, key.2) < (b.1, b.2))) {
                    best = Some(key);
                }
            }
        }
        best
    }
}

/// Same as [`hac`] but over a precomputed row-major distance matrix.
pub fn hac_from_distances(
    dist: Vec<f64>,
    n: usize,
    linkage: Linkage,
    stop: StopRule,
    constraints: Option<&CannotLinks>,
) -> Result<(Vec<i64>, Dendrogram)> {
    if n == 0 {
        return Err(Error::InvalidInput("no points to cluster".into()));
    }
    if dist.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix has {} entries, expected {}",
            dist.len(),
            n * n
        )));
    }
    check_constraints(n, constraints)?;
    match stop {
        StopRule::Threshold(t) if !(t >= 0.0 && t.is_finite()) => {
            return Err(Error::InvalidInput(format!(
                "distance threshold must be finite and >= 0, got {t}"
            )))
        }
        StopRule::Clusters(k) if k == 0 || k > n => {
            return Err(Error::InvalidInput(format!("target cluster count {k} outside 1..={n}")))
        }
        _ => {}
    }

    let mut forbidden = vec![false; n * n];
    if let Some(c) = constraints {
        for i in 0..n {
            for &j in c.partners(i) {
                forbidden[i * n + j] = true;
            }
        }
    }
    let mut st = State {
        n,
        dist,
        forbidden,
        active: vec![true; n],
        size: vec![1; n],
        node: (0..n).collect(),
        nn: vec![None; n],
    };
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        st.nn[i] = st.nearest(i);
    }

    let mut merges = Vec::new();
    let mut n_active = n;
    loop {
        if let StopRule::Clusters(k) = stop {
            if n_active == k {
                break;
            }
        }
        let Some((d, a, b)) = st.closest_pair() else {
            if let StopRule::Clusters(k) = stop {
                return Err(Error::InfeasibleK {
                    target: k,
                    reached: n_active,
                });
            }
            break;
        };
        if let StopRule::Threshold(t) = stop {
            if d > t {
                break;
            }
        }

        let (sa, sb) = (st.size[a] as f64, st.size[b] as f64);
        for k in 0..n {
            if !st.active[k] || k == a || k == b {
                continue;
            }
            let (dka, dkb) = (st.dist[k * n + a], st.dist[k * n + b]);
            let nd = match linkage {
                Linkage::Average => (sa * dka + sb * dkb) / (sa + sb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Ward => {
                    let sk = st.size[k] as f64;
                    ((sk + sa) * dka + (sk + sb) * dkb - sk * d) / (sk + sa + sb)
                }
            };
            st.dist[k * n + a] = nd;
            st.dist[a * n + k] = nd;
            let f = st.forbidden[a * n + k] || st.forbidden[b * n + k];
            st.forbidden[a * n + k] = f;
            st.forbidden[k * n + a] = f;
        }
        st.active[b] = false;
        st.size[a] += st.size[b];
        merges.push(Merge {
            cluster_a: st.node[a],
            cluster_b: st.node[b],
            distance: d,
            new_size: st.size[a],
        });
        st.node[a] = n + merges.len() - 1;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        n_active -= 1;

        for k in 0..n {
            if !st.active[k] {
                continue;
            }
            if k == a || matches!(st.nn[k], Some((_, j)) if j == a || j == b) {
                st.nn[k] = st.nearest(k);
            } else if !st.forbidden[k * n + a] {
                let cand = st.dist[k * n + a];
                if st.nn[k].is_none_or(|(d0, j0)| cand < d0 || (cand == d0 && a < j0)) {
                    st.nn[k] = Some((cand, a));
                }
            }
        }
    }

    let mut labels = vec![-1i64; n];
    let mut next = 0;
    for (slot, m) in members.iter().enumerate() {
        if st.active[slot] {
            for &i in m {
                labels[i] = next;
            }
            next += 1;
        }
    }
    Ok((labels, Dendrogram { n_leaves: n, merges }))
}
