//! Differentiable proxy scores for a k-NN identity decision.
//!
//! For a query `q`, a friend set `P` (same identity) and a foe set `N`:
//!
//! * similarity: `q . x_p` for one friend drawn with the context seed;
//! * proto margin: `q . mu_P - q . mu_N`, where `mu_P` is the
//!   similarity-softmax weighted friend mean and `mu_N` the mean of the
//!   `hard_negatives` foes closest to `q`, both re-normalised;
//! * k-NN margin: softmax over all database similarities at temperature
//!   `tau`, friend mass minus foe mass.
//!
//! Gradients are taken with respect to `q` treated as a free vector. The
//! hard-foe selection is piecewise constant in `q` and contributes nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vecmath::dot;
use crate::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_HARD_NEGATIVES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeWeighting {
    /// `softmax(q . x / tau)` over the set.
    Softmax,
    Uniform,
}

impl std::str::FromStr for PrototypeWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(PrototypeWeighting::Softmax),
            "uniform" => Ok(PrototypeWeighting::Uniform),
            other => Err(Error::InvalidInput(format!("unknown prototype weighting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxyContext {
    pub query: Vec<f64>,
    pub friends: Vec<Vec<f64>>,
    pub foes: Vec<Vec<f64>>,
    pub temperature: f64,
    pub hard_negatives: usize,
    pub seed: u64,
    pub friend_weighting: PrototypeWeighting,
    pub foe_weighting: PrototypeWeighting,
}

impl ProxyContext {
    pub fn new(query: Vec<f64>, friends: Vec<Vec<f64>>, foes: Vec<Vec<f64>>) -> Self {
        ProxyContext {
            query,
            friends,
            foes,
            temperature: DEFAULT_TEMPERATURE,
            hard_negatives: DEFAULT_HARD_NEGATIVES,
            seed: 42,
            friend_weighting: PrototypeWeighting::Softmax,
            foe_weighting: PrototypeWeighting::Uniform,
        }
    }

    pub fn with_temperature(mut self, tau: f64) -> Self {
        self.temperature = tau;
        self
    }

    pub fn with_hard_negatives(mut self, k: usize) -> Self {
        self.hard_negatives = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let d = self.query.len();
        for v in self.friends.iter().chain(&self.foes) {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Index of the friend used by the similarity score.
fn sampled_friend(ctx: &ProxyContext) -> Result<usize> {
    if ctx.friends.is_empty() {
        return Err(Error::EmptyFriendSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    Ok(rng.random_range(0..ctx.friends.len()))
}

pub fn score_similarity(ctx: &ProxyContext) -> Result<f64> {
    ctx.check()?;
    let i = sampled_friend(ctx)?;
    Ok(dot(&ctx.query, &ctx.friends[i]))
}

pub fn grad_similarity(ctx: &ProxyContext) -> Result<Vec<f64>> {
    ctx.check()?;
    let i = sampled_friend(ctx)?;
    Ok(ctx.friends[i].clone())
}

/// Softmax of `q . x / tau` over `xs`, computed with a max shift.
fn softmax_weights(q: &[f64], xs: &[&[f64]], tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = xs.iter().map(|x| dot(q, x) / tau).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `(q . u, d(q . u)/dq)` for the re-normalised prototype `u` of `xs`.
fn prototype_term(q: &[f64], xs: &[&[f64]], weighting: PrototypeWeighting, tau: f64) -> Result<(f64, Vec<f64>)> {
    let d = q.len();
    let w = match weighting {
        PrototypeWeighting::Softmax => softmax_weights(q, xs, tau),
        PrototypeWeighting::Uniform => vec![1.0 / xs.len() as f64; xs.len()],
    };
    let mut m = vec![0.0; d];
    for (wi, x) in w.iter().zip(xs) {
        m.iter_mut().zip(x.iter()).for_each(|(mj, xj)| *mj += wi * xj);
    }
    let r = dot(&m, &m).sqrt();
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    let u: Vec<f64> = m.iter().map(|x| x / r).collect();
    let value = dot(q, &u);
    let mut grad = u.clone();
    if weighting == PrototypeWeighting::Softmax {
        // d(q.u)/dm = (q - (q.u) u) / r, pulled back through dm/dq = sum_i x_i (w_i/tau)(x_i - m)^T.
        let v: Vec<f64> = q.iter().zip(&u).map(|(qj, uj)| (qj - value * uj) / r).collect();
        for (wi, x) in w.iter().zip(xs) {
            let c = wi / tau * dot(x, &v);
            grad.iter_mut()
                .zip(x.iter().zip(&m))
                .for_each(|(g, (xj, mj))| *g += c * (xj - mj));
        }
    }
    Ok((value, grad))
}

/// Foes ordered by similarity to `q`, best first, ties by index; truncated to the hard set.
fn hard_foes(ctx: &ProxyContext) -> Result<Vec<&[f64]>> {
    if ctx.foes.is_empty() {
        return Err(Error::EmptyFoeSet);
    }
    if ctx.hard_negatives == 0 || ctx.hard_negatives > ctx.foes.len() {
        return Err(Error::InvalidInput(format!(
            "hard_negatives must lie in 1..={}, got {}",
            ctx.foes.len(),
            ctx.hard_negatives
        )));
    }
    let mut idx: Vec<(usize, f64)> = ctx
        .foes
        .iter()
        .enumerate()
        .map(|(i, x)| (i, dot(&ctx.query, x)))
        .collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(idx
        .into_iter()
        .take(ctx.hard_negatives)
        .map(|(i, _)| ctx.foes[i].as_slice())
        .collect())
}

fn proto_margin(ctx: &ProxyContext) -> Result<(f64, Vec<f64>)> {
    ctx.check()?;
    if ctx.friends.is_empty() {
        return Err(Error::EmptyFriendSet);
    }
    let friends: Vec<&[f64]> = ctx.friends.iter().map(Vec::as_slice).collect();
    let foes = hard_foes(ctx)?;
    let (fp, gp) = prototype_term(&ctx.query, &friends, ctx.friend_weighting, ctx.temperature)?;
    let (fn_, gn) = prototype_term(&ctx.query, &foes, ctx.foe_weighting, ctx.temperature)?;
    Ok((fp - fn_, gp.iter().zip(&gn).map(|(a, b)| a - b).collect()))
}

pub fn score_proto_margin(ctx: &ProxyContext) -> Result<f64> {
    proto_margin(ctx).map(|(v, _)| v)
}

pub fn grad_proto_margin(ctx: &ProxyContext) -> Result<Vec<f64>> {
    proto_margin(ctx).map(|(_, g)| g)
}

/// `sigma(q, x)` over `P` then `N`, in that order; sums to one.
pub fn knn_softmax(ctx: &ProxyContext) -> Result<Vec<f64>> {
    ctx.check()?;
    if ctx.friends.is_empty() && ctx.foes.is_empty() {
        return Err(Error::EmptyFriendSet);
    }
    let all: Vec<&[f64]> = ctx.friends.iter().chain(&ctx.foes).map(Vec::as_slice).collect();
    Ok(softmax_weights(&ctx.query, &all, ctx.temperature))
}

pub fn score_knn_margin(ctx: &ProxyContext) -> Result<f64> {
    let sigma = knn_softmax(ctx)?;
    let (p, n) = sigma.split_at(ctx.friends.len());
    Ok((p.iter().sum::<f64>() - n.iter().sum::<f64>()).clamp(-1.0, 1.0))
}

/// `(1/tau) * (sum_i y_i sigma_i x_i - S * sum_j sigma_j x_j)` with `y = +1` for friends, `-1` for foes.
pub fn grad_knn_margin(ctx: &ProxyContext) -> Result<Vec<f64>> {
    let sigma = knn_softmax(ctx)?;
    let nf = ctx.friends.len();
    let d = ctx.query.len();
    let mut signed = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let mut score = 0.0;
    for (i, x) in ctx.friends.iter().chain(&ctx.foes).enumerate() {
        let y = if i < nf { 1.0 } else { -1.0 };
        score += y * sigma[i];
        for j in 0..d {
            signed[j] += y * sigma[i] * x[j];
            mean[j] += sigma[i] * x[j];
        }
    }
    Ok(signed
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s - score * m) / ctx.temperature)
        .collect())
}
