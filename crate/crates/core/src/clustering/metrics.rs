//! Chance-adjusted partition agreement.
//!
//! Noise labels (`-1`) are ordinary labels here; callers decide whether to drop them.
//! Labels are canonicalized by first appearance before the contingency table is built,
//! so renaming cluster ids cannot change a result, not even in the last bit.

use std::collections::HashMap;

use crate::{Error, Result};

fn canonical(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

struct Contingency {
    n: usize,
    table: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    same_partition: bool,
}

fn contingency(labels: &[i64], truth: &[i64]) -> Result<Contingency> {
    if labels.len() != truth.len() {
        return Err(Error::DomainMismatch(labels.len(), truth.len()));
    }
    let (a, ra) = canonical(labels);
    let (b, rb) = canonical(truth);
    let mut table = vec![vec![0u64; rb]; ra];
    for (&i, &j) in a.iter().zip(&b) {
        table[i][j] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..rb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        n: labels.len(),
        table,
        rows,
        cols,
        same_partition: a == b,
    })
}

fn comb2(x: u64) -> u128 {
    let x = x as u128;
    x * x.saturating_sub(1) / 2
}

/// Adjusted Rand index. Identical partitions score exactly 1.
pub fn ari(labels: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(labels, truth)?;
    if c.same_partition {
        return Ok(1.0);
    }
    let index: u128 = c.table.iter().flatten().map(|&x| comb2(x)).sum();
    let sum_a: u128 = c.rows.iter().map(|&x| comb2(x)).sum();
    let sum_b: u128 = c.cols.iter().map(|&x| comb2(x)).sum();
    let total = comb2(c.n as u64) as f64;
    let expected = sum_a as f64 * sum_b as f64 / total;
    let max_index = 0.5 * (sum_a as f64 + sum_b as f64);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((index as f64 - expected) / denom)
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Exact expectation of MI under the hypergeometric model of random labelings
/// with the observed marginals.
fn expected_mutual_information(c: &Contingency) -> f64 {
    let n = c.n;
    let mut log_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        log_fact[k] = log_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.rows {
        for &b in &c.cols {
            let (a, b) = (a as usize, b as usize);
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = log_fact[a] + log_fact[b] + log_fact[n - a] + log_fact[n - b] - log_fact[n];
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (a as f64 * b as f64)).ln();
                let log_p = fixed - log_fact[nij] - log_fact[a - nij] - log_fact[b - nij] - log_fact[n + nij - a - b];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information with arithmetic-mean normalization.
/// Identical partitions score exactly 1.
pub fn ami(labels: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(labels, truth)?;
    if c.same_partition {
        return Ok(1.0);
    }
    let n = c.n as f64;
    let mi = mutual_information(&c);
    let emi = expected_mutual_information(&c);
    let normalizer = 0.5 * (entropy(&c.rows, n) + entropy(&c.cols, n));
    let mut denom = normalizer - emi;
    // Keeps the sign when the normalizer and the expectation coincide.
    if denom < 0.0 {
        denom = denom.min(-f64::EPSILON);
    } else {
        denom = denom.max(f64::EPSILON);
    }
    Ok((mi - emi) / denom)
}

/// Number of distinct non-noise labels.
pub fn estimate_population(labels: &[i64]) -> usize {
    let mut seen: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ari_pairs(a: &[i64], b: &[i64]) -> f64 {
        // Counts agreements pair by pair instead of through the contingency table.
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut pairs) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                both += (sa && sb) as u8 as f64;
                only_a += sa as u8 as f64;
                only_b += sb as u8 as f64;
                pairs += 1.0;
            }
        }
        let expected = only_a * only_b / pairs;
        let max = 0.5 * (only_a + only_b);
        if max == expected {
            return if both == max { 1.0 } else { 0.0 };
        }
        (both - expected) / (max - expected)
    }

    fn binom(n: u64, k: u64) -> u128 {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut r: u128 = 1;
        for i in 0..k {
            r = r * (n - i) as u128 / (i + 1) as u128;
        }
        r
    }

    /// E[MI] from exact integer hypergeometric weights.
    fn emi_exact(a: &[i64], b: &[i64]) -> f64 {
        let c = contingency(a, b).unwrap();
        let n = c.n as u64;
        let nf = n as f64;
        let mut total = 0.0;
        for &ai in &c.rows {
            for &bj in &c.cols {
                let denom = binom(n, ai);
                for nij in 1..=ai.min(bj) {
                    let ways = binom(bj, nij) * binom(n - bj, ai - nij);
                    if ways == 0 {
                        continue;
                    }
                    let x = nij as f64;
                    total += (ways as f64 / denom as f64) * x / nf * (nf * x / (ai as f64 * bj as f64)).ln();
                }
            }
        }
        total
    }

    fn ami_oracle(a: &[i64], b: &[i64]) -> f64 {
        let n = a.len() as f64;
        let c = contingency(a, b).unwrap();
        if c.same_partition {
            return 1.0;
        }
        let mut mi = 0.0;
        for i in 0..a.len() {
            // Per-item form of MI: average of log(n * n_ij / (a_i b_j)).
            let nij = (0..a.len()).filter(|&k| a[k] == a[i] && b[k] == b[i]).count() as f64;
            let ai = a.iter().filter(|&&x| x == a[i]).count() as f64;
            let bj = b.iter().filter(|&&x| x == b[i]).count() as f64;
            mi += (n * nij / (ai * bj)).ln() / n;
        }
        let h = |l: &[i64]| -> f64 {
            l.iter()
                .map(|x| -(l.iter().filter(|&y| y == x).count() as f64 / n).ln() / n)
                .sum()
        };
        let emi = emi_exact(a, b);
        let denom = 0.5 * (h(a) + h(b)) - emi;
        let denom = if denom < 0.0 {
            denom.min(-f64::EPSILON)
        } else {
            denom.max(f64::EPSILON)
        };
        (mi - emi) / denom
    }

    #[test]
    fn ari_edge_cases() {
        assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 3, 3]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 0, 0], &[0, 1, 2, 3]).unwrap(), 0.0);
        assert!(matches!(ari(&[0], &[0, 1]), Err(Error::DomainMismatch(1, 2))));
    }

    #[test]
    fn ari_hand_case() {
        let a = [0, 0, 0, 1, 1, 1];
        let b = [0, 0, 1, 1, 2, 2];
        // index 2, sums 6 and 3 over 15 pairs: (2 - 1.2) / (4.5 - 1.2)
        let expected = 0.8 / 3.3;
        assert!((ari(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((ari_pairs(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn ami_two_by_two() {
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        // MI is zero and so is its expectation's effect: AMI = -E[MI] / (ln2 - E[MI]).
        let emi = emi_exact(&a, &b);
        let expected = -emi / (std::f64::consts::LN_2 - emi);
        assert!((ami(&a, &b).unwrap() - expected).abs() < 1e-10);
        assert_eq!(ami(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn random_partitions_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(2..=30);
            let ka = rng.random_range(1..=n.min(8) as i64);
            let kb = rng.random_range(1..=n.min(8) as i64);
            let a: Vec<i64> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let b: Vec<i64> = (0..n).map(|_| rng.random_range(0..kb)).collect();
            let got = ari(&a, &b).unwrap();
            let want = ari_pairs(&a, &b);
            assert!((got - want).abs() < 1e-10, "ari {got} vs {want}");
            let got = ami(&a, &b).unwrap();
            let want = ami_oracle(&a, &b);
            assert!((got - want).abs() < 1e-10, "ami {got} vs {want} for {a:?} {b:?}");
        }
    }

    #[test]
    fn population_counts_non_noise() {
        assert_eq!(estimate_population(&[-1, -1]), 0);
        assert_eq!(estimate_population(&[0, 0, 1, 2]), 3);
        assert_eq!(estimate_population(&[0, -1, 0]), 1);
    }

    fn partition(n: usize) -> impl Strategy<Value = (Vec<i64>, Vec<i64>)> {
        (prop::collection::vec(0i64..5, n), prop::collection::vec(0i64..5, n))
    }

    proptest! {
        #[test]
        fn symmetric((a, b) in (2usize..25).prop_flat_map(partition)) {
            prop_assert!((ari(&a, &b).unwrap() - ari(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((ami(&a, &b).unwrap() - ami(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn renaming_is_exact((a, b) in (2usize..25).prop_flat_map(partition), shift in 1i64..100) {
            let renamed: Vec<i64> = a.iter().map(|x| x * 7 + shift).collect();
            prop_assert_eq!(ari(&a, &b).unwrap().to_bits(), ari(&renamed, &b).unwrap().to_bits());
            prop_assert_eq!(ami(&a, &b).unwrap().to_bits(), ami(&renamed, &b).unwrap().to_bits());
        }

        #[test]
        fn identical_is_one(a in prop::collection::vec(-1i64..6, 1..30)) {
            prop_assert_eq!(ari(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(ami(&a, &a).unwrap(), 1.0);
        }
    }
}
