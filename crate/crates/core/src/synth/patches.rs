//! A linear toy patch embedder with exactly known relevance, and probe grids built
//! around a synthetic manifest.
//!
//! The embedder computes `normalize(sum_p w_p * patch_p)`. Patch `p` contributes
//! `w_p * patch_p` to the pre-normalization sum, so `|w_p| * |patch_p|` is its exact
//! contribution magnitude.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::reid::{gen_reid_scenario, ReidSpec};
use crate::datamodel::Manifest;
use crate::explain::{PatchEmbedder, PatchGrid, RelevanceMap};
use crate::retrieval::eval_probes;
use crate::vecmath::{norm, normalized};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyPatchEmbedder {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, one weight per patch.
    pub weights: Vec<f64>,
}

impl ToyPatchEmbedder {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for a {rows}x{cols} grid",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: "patch weights".into(),
            });
        }
        Ok(ToyPatchEmbedder { rows, cols, weights })
    }

    pub fn uniform(rows: usize, cols: usize) -> Self {
        ToyPatchEmbedder {
            rows,
            cols,
            weights: vec![1.0; rows * cols],
        }
    }

    /// Exact per-patch contribution magnitude for `grid`.
    pub fn relevance(&self, grid: &PatchGrid) -> Result<RelevanceMap> {
        self.check(grid)?;
        let values = (0..grid.n_patches())
            .map(|p| self.weights[p].abs() * norm(grid.patch(p)))
            .collect();
        RelevanceMap::new(grid.rows, grid.cols, values)
    }

    fn check(&self, grid: &PatchGrid) -> Result<()> {
        if grid.rows != self.rows || grid.cols != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "embedder expects {}x{} patches, grid is {}x{}",
                self.rows, self.cols, grid.rows, grid.cols
            )));
        }
        Ok(())
    }
}

impl PatchEmbedder for ToyPatchEmbedder {
    /// A grid whose weighted sum vanishes embeds to the zero vector.
    fn embed(&self, grid: &PatchGrid) -> Vec<f64> {
        assert_eq!((grid.rows, grid.cols), (self.rows, self.cols), "patch grid shape");
        let mut sum = vec![0.0; grid.patch_dim];
        for (p, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                for (s, x) in sum.iter_mut().zip(grid.patch(p)) {
                    *s += w * x;
                }
            }
        }
        normalized(&sum).unwrap_or_else(|_| vec![0.0; grid.patch_dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSpec {
    pub reid: ReidSpec,
    pub rows: usize,
    pub cols: usize,
    /// Patches carrying the probe's identity signal.
    pub informative: usize,
    pub informative_weight: f64,
    pub background_weight: f64,
    /// Noise added to each informative patch, relative to the unit signal.
    pub patch_noise: f64,
    /// Typical norm of a background patch.
    pub background_scale: f64,
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            reid: ReidSpec::default(),
            rows: 4,
            cols: 4,
            informative: 4,
            informative_weight: 1.0,
            background_weight: 0.1,
            patch_noise: 0.2,
            background_scale: 1.0,
            max_probes: Some(200),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchScenario {
    pub manifest: Manifest,
    pub embedder: ToyPatchEmbedder,
    /// `(record_id, grid)` per probe, in record order.
    pub grids: Vec<(u64, PatchGrid)>,
    /// Exact relevance for each grid, with `record_id` set.
    pub relevance: Vec<RelevanceMap>,
}

pub fn gen_patch_scenario(spec: &PatchSpec) -> Result<PatchScenario> {
    let n = spec.rows * spec.cols;
    if n == 0 || spec.informative == 0 || spec.informative > n {
        return Err(Error::InvalidSpec("informative must lie in 1..=rows*cols".into()));
    }
    for v in [
        spec.informative_weight,
        spec.background_weight,
        spec.patch_noise,
        spec.background_scale,
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidSpec(
                "patch weights and noise must be finite and >= 0".into(),
            ));
        }
    }
    let scenario = gen_reid_scenario(&spec.reid)?;
    let manifest = scenario.manifest;
    let dim = manifest.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut informative = vec![false; n];
    for &p in &slots[..spec.informative] {
        informative[p] = true;
    }
    let weights = informative
        .iter()
        .map(|&i| {
            if i {
                spec.informative_weight
            } else {
                spec.background_weight
            }
        })
        .collect();
    let embedder = ToyPatchEmbedder::new(spec.rows, spec.cols, weights)?;

    let probes = eval_probes(&manifest, spec.reid.split);
    let take = spec.max_probes.unwrap_or(probes.len()).min(probes.len());
    let scale = (dim as f64).sqrt();
    let mut grids = Vec::with_capacity(take);
    let mut relevance = Vec::with_capacity(take);
    for probe in &probes[..take] {
        let mut values = Vec::with_capacity(n * dim);
        for &inf in &informative {
            for d in 0..dim {
                let g: f64 = rng.sample(StandardNormal);
                let x = if inf {
                    probe.vector[d] + spec.patch_noise * g / scale
                } else {
                    spec.background_scale * g / scale
                };
                values.push(x as f32 as f64);
            }
        }
        let grid = PatchGrid::new(spec.rows, spec.cols, dim, values)?;
        let mut map = embedder.relevance(&grid)?;
        map.record_id = Some(probe.record_id);
        relevance.push(map);
        grids.push((probe.record_id, grid));
    }
    Ok(PatchScenario {
        manifest,
        embedder,
        grids,
        relevance,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridLine {
    record_id: u64,
    rows: usize,
    cols: usize,
    patch_dim: usize,
    values: Vec<f32>,
}

/// Writes probe patch grids as JSON lines; values are narrowed to f32.
pub fn write_patch_grids(path: impl AsRef<Path>, grids: &[(u64, PatchGrid)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (record_id, g) in grids {
        let line = GridLine {
            record_id: *record_id,
            rows: g.rows,
            cols: g.cols,
            patch_dim: g.patch_dim,
            values: g.values.iter().map(|&x| x as f32).collect(),
        };
        let s = serde_json::to_string(&line).expect("grid lines always serialise");
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_patch_grids(path: impl AsRef<Path>) -> Result<Vec<(u64, PatchGrid)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: GridLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: no + 1,
            message: e.to_string(),
        })?;
        let values = parsed.values.iter().map(|&x| x as f64).collect();
        out.push((
            parsed.record_id,
            PatchGrid::new(parsed.rows, parsed.cols, parsed.patch_dim, values)?,
        ));
    }
    Ok(out)
}
