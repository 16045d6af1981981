//! DBSCAN on cosine distance, with deferred absorption under cannot-link constraints.
//!
//! Points are visited in index order. While a cluster expands, a point whose cannot-link
//! partner already belongs to that cluster is skipped; it stays unassigned and may later
//! seed or join another cluster. Anything never assigned is noise (`-1`).

use std::collections::VecDeque;

use super::constraints::CannotLinks;
use super::hac::{check_constraints, pairwise_cosine_distances};
use crate::{Error, Result};

pub const DEFAULT_EPS: f64 = 0.3;
pub const DEFAULT_MIN_PTS: usize = 2;

const UNASSIGNED: i64 = -2;

/// `min_pts` counts the point itself.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize, constraints: Option<&CannotLinks>) -> Result<Vec<i64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be finite and > 0, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::InvalidInput("min_pts must be >= 1".into()));
    }
    let n = points.len();
    check_constraints(n, constraints)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let dist = pairwise_cosine_distances(points);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist[i * n + j] <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels = vec![UNASSIGNED; n];
    let mut queued = vec![i64::MIN; n];
    let mut next = 0i64;
    let conflicts =
        |labels: &[i64], p: usize, c: i64| constraints.is_some_and(|cl| cl.partners(p).iter().any(|&q| labels[q] == c));

    loop {
        let before = next;
        for seed in 0..n {
            if labels[seed] != UNASSIGNED || !core[seed] {
                continue;
            }
            let c = next;
            next += 1;
            let mut queue = VecDeque::from([seed]);
            queued[seed] = c;
            while let Some(p) = queue.pop_front() {
                if labels[p] != UNASSIGNED || conflicts(&labels, p, c) {
                    continue;
                }
                labels[p] = c;
                if core[p] {
                    for &q in &neighbors[p] {
                        if labels[q] == UNASSIGNED && queued[q] != c {
                            queued[q] = c;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        if next == before {
            break;
        }
    }
    for l in &mut labels {
        if *l == UNASSIGNED {
            *l = -1;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::normalized;

    fn at(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn identical_points_single_cluster() {
        let pts = vec![at(10.0); 5];
        assert_eq!(dbscan(&pts, 1e-9, 1, None).unwrap(), vec![0; 5]);
    }

    #[test]
    fn two_blobs_and_noise() {
        // Blobs at 0 and 90 degrees, one stray point at 45 degrees.
        // eps = 1 - cos(3 deg) keeps each blob connected and the stray point isolated.
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 90.0, 91.0, 92.0, 45.0].iter().map(|&d| at(d)).collect();
        let eps = 1.0 - 3f64.to_radians().cos();
        assert_eq!(dbscan(&pts, eps, 2, None).unwrap(), vec![0, 0, 0, 1, 1, 1, -1]);
    }

    #[test]
    fn border_point_attached_but_not_expanded() {
        // With min_pts 3 only 1 and 2 degrees are core; 0 and 3.5 are border points, 5.2 is isolated.
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 3.5, 5.2].iter().map(|&d| at(d)).collect();
        let eps = 1.0 - 1.6f64.to_radians().cos();
        assert_eq!(dbscan(&pts, eps, 3, None).unwrap(), vec![0, 0, 0, 0, -1]);
    }

    #[test]
    fn cannot_link_splits_blob() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| normalized(&[1.0, 0.01 * i as f64]).unwrap()).collect();
        let cl = CannotLinks::from_pairs(6, [(1, 4)]);
        let labels = dbscan(&pts, 0.1, 1, Some(&cl)).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 0, 1, 0]);
        assert!(cl.violations(&labels).is_empty());
    }

    #[test]
    fn deferred_point_earlier_than_seed_is_revisited() {
        let pts = vec![at(0.0); 4];
        let cl = CannotLinks::from_pairs(4, [(0, 1), (0, 2), (1, 2)]);
        let labels = dbscan(&pts, 1e-9, 1, Some(&cl)).unwrap();
        assert_eq!(labels, vec![0, 1, 2, 0]);
    }
}
