//! Dense vector helpers shared by retrieval, aggregation and clustering.
//!
//! [`dot`] fixes its summation order (eight interleaved partial sums, then a
//! pairwise tree) so every caller that compares similarities gets bit-identical
//! values for the same pair of vectors, independent of thread count.

use crate::{Error, Result};

/// Stored vectors are accepted as unit length when `| ||v|| - 1 |` is within this.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

const LANES: usize = 8;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `v / ||v||`, or [`Error::ZeroVector`] when the norm is zero.
pub fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Normalises in place; a zero vector is left untouched and reported.
pub fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroVector);
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Unit-normalised arithmetic mean of a set of equal-length vectors.
pub fn normalized_mean<'a, I>(vectors: I, dim: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyTracklet);
    }
    normalize_in_place(&mut sum)?;
    Ok(sum)
}

/// Ingestion rule for stored embeddings.
///
/// Vectors already within [`UNIT_NORM_TOLERANCE`] of unit length are kept
/// verbatim. Anything else is normalised in f64 and snapped back onto the
/// f32 grid, so that a vector written to a sidecar and read back is
/// bit-identical and never renormalised a second time.
pub fn ingest_unit(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !n.is_finite() {
        return Err(Error::NonFiniteValue {
            context: "embedding norm".into(),
        });
    }
    if (n - 1.0).abs() <= UNIT_NORM_TOLERANCE {
        return Ok(());
    }
    normalize_in_place(v)?;
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
    Ok(())
}
