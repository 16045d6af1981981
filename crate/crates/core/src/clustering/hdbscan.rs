//! HDBSCAN on cosine distance.
//!
//! Mutual reachability, Prim's MST over the dense graph, single-linkage hierarchy,
//! condensation at `min_cluster_size`, then excess-of-mass selection that never selects
//! the root. Under cannot-link constraints a cluster whose points include a linked pair
//! cannot be selected; its stability is replaced by the sum of its children's, so
//! extraction falls through to the children (or to noise).

use super::constraints::CannotLinks;
use super::hac::{check_constraints, pairwise_cosine_distances};
use crate::{Error, Result};

pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 3;

/// Floor applied to distances before inverting to lambda, so duplicate points stay finite.
const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedEdge {
    /// Cluster index; the root is 0.
    pub parent: usize,
    /// Either `Child::Point` or `Child::Cluster`.
    pub child: Child,
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Child {
    Point(usize),
    Cluster(usize),
}

/// `min_samples` defaults to `min_cluster_size` when `None`; the point itself counts.
pub fn hdbscan(
    points: &[Vec<f64>],
    min_cluster_size: usize,
    min_samples: Option<usize>,
    constraints: Option<&CannotLinks>,
) -> Result<Vec<i64>> {
    if min_cluster_size < 2 {
        return Err(Error::InvalidInput(format!(
            "min_cluster_size must be >= 2, got {min_cluster_size}"
        )));
    }
    let min_samples = min_samples.unwrap_or(min_cluster_size);
    if min_samples == 0 {
        return Err(Error::InvalidInput("min_samples must be >= 1".into()));
    }
    let n = points.len();
    check_constraints(n, constraints)?;
    if n < min_cluster_size {
        return Ok(vec![-1; n]);
    }
    let dist = pairwise_cosine_distances(points);
    let core = core_distances(&dist, n, min_samples);
    let mst = prim_mst(&dist, &core, n);
    let tree = single_linkage(n, mst);
    let condensed = condense(&tree, n, min_cluster_size);
    Ok(extract(&condensed, n, constraints))
}

fn core_distances(dist: &[f64], n: usize, min_samples: usize) -> Vec<f64> {
    let k = min_samples.min(n) - 1;
    (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row[i] = 0.0;
            let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Edges `(a, b, weight)` in the order Prim adds them.
fn prim_mst(dist: &[f64], core: &[f64], n: usize) -> Vec<(usize, usize, f64)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let mr = dist[current * n + j].max(core[current]).max(core[j]);
            if mr < best[j] {
                best[j] = mr;
                from[j] = current;
            }
            if best[j] < next_d || next == usize::MAX {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_d));
        current = next;
    }
    edges
}

/// Scipy-style linkage rows `(left, right, distance, size)`; row `t` creates node `n + t`.
fn single_linkage(n: usize, mut mst: Vec<(usize, usize, f64)>) -> Vec<(usize, usize, f64, usize)> {
    mst.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    let mut size = vec![1usize; 2 * n - 1];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut rows = Vec::with_capacity(n - 1);
    for (t, (a, b, d)) in mst.into_iter().enumerate() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + t;
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        rows.push((ra, rb, d, size[node]));
    }
    rows
}

fn leaves_under(tree: &[(usize, usize, f64, usize)], n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let (l, r, _, _) = tree[x - n];
            stack.push(r);
            stack.push(l);
        }
    }
}

fn condense(tree: &[(usize, usize, f64, usize)], n: usize, min_size: usize) -> Vec<CondensedEdge> {
    let node_size = |x: usize| if x < n { 1 } else { tree[x - n].3 };
    let root = 2 * n - 2;
    let mut relabel = vec![0usize; 2 * n - 1];
    let mut next_cluster = 1;
    let mut out = Vec::new();
    let mut stack = vec![root];
    let mut leaves = Vec::new();
    while let Some(node) = stack.pop() {
        if node < n {
            continue;
        }
        let (left, right, d, _) = tree[node - n];
        let lambda = 1.0 / d.max(MIN_DISTANCE);
        let parent = relabel[node];
        let (ls, rs) = (node_size(left), node_size(right));
        let mut fall_out = |child: usize, out: &mut Vec<CondensedEdge>| {
            leaves.clear();
            leaves_under(tree, n, child, &mut leaves);
            for &p in &leaves {
                out.push(CondensedEdge {
                    parent,
                    child: Child::Point(p),
                    lambda,
                    size: 1,
                });
            }
        };
        match (ls >= min_size, rs >= min_size) {
            (true, true) => {
                for (child, size) in [(left, ls), (right, rs)] {
                    relabel[child] = next_cluster;
                    out.push(CondensedEdge {
                        parent,
                        child: Child::Cluster(next_cluster),
                        lambda,
                        size,
                    });
                    next_cluster += 1;
                }
                stack.push(right);
                stack.push(left);
            }
            (false, false) => {
                fall_out(left, &mut out);
                fall_out(right, &mut out);
            }
            (false, true) => {
                fall_out(left, &mut out);
                relabel[right] = parent;
                stack.push(right);
            }
            (true, false) => {
                fall_out(right, &mut out);
                relabel[left] = parent;
                stack.push(left);
            }
        }
    }
    out
}

fn extract(condensed: &[CondensedEdge], n: usize, constraints: Option<&CannotLinks>) -> Vec<i64> {
    let n_clusters = 1 + condensed
        .iter()
        .filter_map(|e| match e.child {
            Child::Cluster(c) => Some(c),
            Child::Point(_) => None,
        })
        .max()
        .unwrap_or(0);
    let mut birth = vec![0.0; n_clusters];
    let mut cluster_parent = vec![usize::MAX; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    let mut point_parent = vec![0usize; n];
    for e in condensed {
        match e.child {
            Child::Cluster(c) => {
                birth[c] = e.lambda;
                cluster_parent[c] = e.parent;
                children[e.parent].push(c);
            }
            Child::Point(p) => point_parent[p] = e.parent,
        }
    }
    let mut stability = vec![0.0; n_clusters];
    for e in condensed {
        stability[e.parent] += (e.lambda - birth[e.parent]) * e.size as f64;
    }

    // Children always carry larger indices than their parent.
    let mut points_of: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (p, &c) in point_parent.iter().enumerate() {
        points_of[c].push(p);
    }
    for c in (1..n_clusters).rev() {
        let moved = std::mem::take(&mut points_of[c]);
        points_of[cluster_parent[c]].extend(&moved);
        points_of[c] = moved;
    }
    let mut stamp = vec![usize::MAX; n];
    let mut violates = |c: usize| -> bool {
        let Some(cl) = constraints else { return false };
        for &p in &points_of[c] {
            stamp[p] = c;
        }
        points_of[c]
            .iter()
            .any(|&p| cl.partners(p).iter().any(|&q| stamp[q] == c))
    };

    let mut selected = vec![false; n_clusters];
    for c in (1..n_clusters).rev() {
        let child_sum: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if violates(c) || child_sum > stability[c] {
            stability[c] = child_sum;
        } else {
            selected[c] = true;
            let mut stack = children[c].clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(&children[k]);
            }
        }
    }

    let mut label_of = vec![-1i64; n_clusters];
    let mut next = 0;
    for c in 1..n_clusters {
        if selected[c] {
            label_of[c] = next;
            next += 1;
        }
    }
    (0..n)
        .map(|p| {
            let mut c = point_parent[p];
            while c != 0 && !selected[c] {
                c = cluster_parent[c];
            }
            label_of[c]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::normalized;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn bundle(rng: &mut ChaCha8Rng, center: &[f64], spread: f64, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let v: Vec<f64> = center
                    .iter()
                    .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalized(&v).unwrap()
            })
            .collect()
    }

    fn axis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn too_few_points_all_noise() {
        let pts = vec![axis(3, 0), axis(3, 1)];
        assert_eq!(hdbscan(&pts, 3, None, None).unwrap(), vec![-1, -1]);
    }

    #[test]
    fn three_bundles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        for i in 0..3 {
            pts.extend(bundle(&mut rng, &axis(8, i), 0.05, 30));
        }
        let labels = hdbscan(&pts, 5, None, None).unwrap();
        for b in 0..3 {
            let chunk = &labels[b * 30..(b + 1) * 30];
            let main = chunk[0];
            assert!(main >= 0);
            assert!(chunk.iter().filter(|&&l| l == main).count() >= 27, "{chunk:?}");
        }
        let mut distinct: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
        distinct.sort();
        distinct.dedup();
        assert_eq!(distinct, vec![0, 1, 2]);
    }

    #[test]
    fn cannot_link_blocks_whole_bundle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = bundle(&mut rng, &axis(8, 0), 0.05, 30);
        pts.extend(bundle(&mut rng, &axis(8, 1), 0.05, 30));
        let free = hdbscan(&pts, 5, None, None).unwrap();
        assert!(free[0] >= 0 && free[0] == free[29]);
        let cl = CannotLinks::from_pairs(60, [(0, 29)]);
        let labels = hdbscan(&pts, 5, None, Some(&cl)).unwrap();
        assert!(cl.violations(&labels).is_empty());
        assert!(labels[0] < 0 || labels[29] < 0 || labels[0] != labels[29]);
    }

    #[test]
    fn condensed_tree_accounts_for_every_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| normalized(&[rng.random::<f64>(), rng.random::<f64>(), 0.1]).unwrap())
            .collect();
        let dist = pairwise_cosine_distances(&pts);
        let core = core_distances(&dist, 40, 4);
        let mst = prim_mst(&dist, &core, 40);
        assert_eq!(mst.len(), 39);
        let tree = single_linkage(40, mst);
        assert_eq!(tree.last().unwrap().3, 40);
        let condensed = condense(&tree, 40, 4);
        let mut seen: Vec<usize> = condensed
            .iter()
            .filter_map(|e| match e.child {
                Child::Point(p) => Some(p),
                _ => None,
            })
            .collect();
        seen.sort();
        assert_eq!(seen, (0..40).collect::<Vec<_>>());
        for e in &condensed {
            if let Child::Cluster(c) = e.child {
                assert!(c > e.parent);
                assert!(e.size >= 4);
            }
        }
    }

    #[test]
    fn core_distance_counts_self() {
        let pts = vec![axis(2, 0), axis(2, 0), axis(2, 1)];
        let dist = pairwise_cosine_distances(&pts);
        assert_eq!(core_distances(&dist, 3, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&dist, 3, 2), vec![0.0, 0.0, 1.0]);
    }
}
