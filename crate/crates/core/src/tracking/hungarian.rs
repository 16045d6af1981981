//! Minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).

/// Assigns rows to columns minimizing total cost. Non-finite entries are forbidden.
///
/// The matrix is padded to square with zero-cost dummies. Forbidden entries are replaced
/// by a cost larger than any complete legal assignment, so the solver first maximizes the
/// number of legal pairs and then minimizes their cost; any forbidden or dummy pair in
/// the optimum is reported as unassigned. Returns, for each row, its column if any.
pub fn hungarian_min_cost(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let n = rows.max(cols);
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for &c in cost.iter().flatten().filter(|c| c.is_finite()) {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    let big = (hi - lo + 1.0) * n as f64 + 1.0;
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            let c = cost[i][j];
            if c.is_finite() {
                c - lo
            } else {
                big
            }
        } else {
            0.0
        }
    };

    // 1-based potentials formulation; p[j] is the row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols && cost[i - 1][j - 1].is_finite() {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Matched `(row, col)` pairs in row order.
pub fn assignment_pairs(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    hungarian_min_cost(cost)
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| (i, j)))
        .collect()
}
