//! Patch-flipping evaluation of relevance maps.
//!
//! Patches are ranked by relevance (most relevant first, or least relevant
//! first), the leading fraction is replaced by a zero baseline patch, the
//! probe is re-embedded and re-identified against the gallery. Accuracy as a
//! function of the flipped fraction is the perturbation curve.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{encounter_of, EncounterKey, Manifest};
use crate::retrieval::{knn_vector, Gallery};
use crate::{Error, Result};

pub const RELEVANCE_MAGIC: &[u8; 4] = b"RLV1";

/// Per-patch relevance on a `rows x cols` grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<u64>,
}

impl RelevanceMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: "relevance map".into(),
            });
        }
        Ok(RelevanceMap {
            rows,
            cols,
            values,
            record_id: None,
        })
    }
}

/// Probe input as a grid of patch feature vectors; patch `p` is
/// `values[p * patch_dim..(p + 1) * patch_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_dim: usize,
    pub values: Vec<f64>,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, patch_dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols * patch_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {rows}x{cols} patches of dimension {patch_dim}",
                values.len()
            )));
        }
        Ok(PatchGrid {
            rows,
            cols,
            patch_dim,
            values,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch(&self, p: usize) -> &[f64] {
        &self.values[p * self.patch_dim..(p + 1) * self.patch_dim]
    }

    /// Copy with the listed patches set to the zero baseline.
    pub fn with_baseline(&self, patches: &[usize]) -> PatchGrid {
        let mut out = self.clone();
        for &p in patches {
            out.values[p * self.patch_dim..(p + 1) * self.patch_dim].fill(0.0);
        }
        out
    }
}

/// Maps a patch grid to an embedding. Must be deterministic.
pub trait PatchEmbedder: Sync {
    fn embed(&self, patches: &PatchGrid) -> Vec<f64>;
}

impl<F> PatchEmbedder for F
where
    F: Fn(&PatchGrid) -> Vec<f64> + Sync,
{
    fn embed(&self, patches: &PatchGrid) -> Vec<f64> {
        self(patches)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationOrder {
    /// Most relevant first.
    Morf,
    /// Least relevant first.
    Lerf,
}

impl std::str::FromStr for PerturbationOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "morf" => Ok(PerturbationOrder::Morf),
            "lerf" => Ok(PerturbationOrder::Lerf),
            other => Err(Error::InvalidInput(format!("unknown order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub fractions: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub order: PerturbationOrder,
}

#[derive(Debug, Clone)]
pub struct FaithfulnessProbe {
    pub record_id: u64,
    pub patches: PatchGrid,
    pub relevance: RelevanceMap,
    pub encounter: EncounterKey,
    pub identity: String,
}

/// Pairs grid `i` with relevance map `i` and looks up each probe's encounter and identity.
pub fn assemble_probes(
    m: &Manifest,
    grids: Vec<(u64, PatchGrid)>,
    maps: Vec<RelevanceMap>,
) -> Result<Vec<FaithfulnessProbe>> {
    if grids.len() != maps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} patch grids but {} relevance maps",
            grids.len(),
            maps.len()
        )));
    }
    let tracklets = m.tracklet_index();
    let records: BTreeMap<u64, &str> = m
        .records
        .iter()
        .map(|r| (r.record_id, r.tracklet_id.as_str()))
        .collect();
    grids
        .into_iter()
        .zip(maps)
        .map(|((record_id, patches), relevance)| {
            if relevance.record_id.is_some_and(|r| r != record_id) {
                return Err(Error::InvalidInput(format!(
                    "relevance map for record {} paired with grid for record {record_id}",
                    relevance.record_id.unwrap_or_default()
                )));
            }
            let t = records
                .get(&record_id)
                .and_then(|tid| tracklets.get(tid))
                .ok_or_else(|| Error::InvalidInput(format!("record {record_id} is not in the manifest")))?;
            let identity = t
                .identity
                .clone()
                .ok_or_else(|| Error::InvalidInput(format!("record {record_id} has no identity label")))?;
            Ok(FaithfulnessProbe {
                record_id,
                patches,
                relevance,
                encounter: encounter_of(t),
                identity,
            })
        })
        .collect()
}

/// Patch indices in flipping order. Equal relevance keeps ascending index in both orders.
pub fn patch_order(map: &RelevanceMap, order: PerturbationOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..map.values.len()).collect();
    match order {
        PerturbationOrder::Morf => idx.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b))),
        PerturbationOrder::Lerf => idx.sort_by(|&a, &b| map.values[a].total_cmp(&map.values[b]).then(a.cmp(&b))),
    }
    idx
}

/// Number of patches flipped at fraction `f`: `ceil(f * n)`.
fn flipped_count(f: f64, n: usize) -> usize {
    // Guard against 0.3 * 10 = 3.0000000000000004.
    ((f * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.first() != Some(&0.0) {
        return Err(Error::InvalidInput("fractions must start at 0".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "fractions must be strictly ascending within [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Frame-level accuracy after flipping each fraction of patches, one entry per fraction.
pub fn perturbation_curve(
    probes: &[FaithfulnessProbe],
    embedder: &dyn PatchEmbedder,
    gallery: &Gallery,
    order: PerturbationOrder,
    fractions: &[f64],
    k: usize,
) -> Result<PerturbationCurve> {
    check_fractions(fractions)?;
    if probes.is_empty() {
        return Err(Error::NoProbes);
    }
    for p in probes {
        if p.relevance.rows != p.patches.rows || p.relevance.cols != p.patches.cols {
            return Err(Error::OrderMismatch {
                map_rows: p.relevance.rows,
                map_cols: p.relevance.cols,
                grid_rows: p.patches.rows,
                grid_cols: p.patches.cols,
            });
        }
    }

    let outcomes: Vec<Vec<bool>> = probes
        .par_iter()
        .map(|p| {
            let ranked = patch_order(&p.relevance, order);
            let n = p.patches.n_patches();
            fractions
                .iter()
                .map(|&f| {
                    let grid = p.patches.with_baseline(&ranked[..flipped_count(f, n)]);
                    let v = embedder.embed(&grid);
                    let res = knn_vector(gallery, p.record_id, &v, &p.encounter, k)?;
                    Ok(res.identity == p.identity)
                })
                .collect::<Result<Vec<bool>>>()
        })
        .collect::<Result<_>>()?;

    let accuracy = (0..fractions.len())
        .map(|i| outcomes.iter().filter(|o| o[i]).count() as f64 / probes.len() as f64)
        .collect();
    Ok(PerturbationCurve {
        fractions: fractions.to_vec(),
        accuracy,
        order,
    })
}

/// Trapezoidal area under accuracy over fraction.
pub fn curve_auc(c: &PerturbationCurve) -> f64 {
    c.fractions
        .windows(2)
        .zip(c.accuracy.windows(2))
        .map(|(f, a)| (f[1] - f[0]) * (a[0] + a[1]) / 2.0)
        .sum()
}

/// Share of absolute relevance that falls inside `mask` (row-major, same grid).
pub fn relevance_mass_in_mask(map: &RelevanceMap, mask: &[bool]) -> Result<f64> {
    if mask.len() != map.values.len() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} cells, map has {}",
            mask.len(),
            map.values.len()
        )));
    }
    let total: f64 = map.values.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Err(Error::ZeroRelevance);
    }
    let inside: f64 = map
        .values
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| v.abs())
        .sum();
    Ok(inside / total)
}

/// Writes `RLV1`, `u32` rows, `u32` cols, then one f32 grid per map.
pub fn write_relevance_maps(path: impl AsRef<Path>, maps: &[RelevanceMap]) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = maps.first().map(|m| (m.rows, m.cols)).unwrap_or((0, 0));
    if maps.iter().any(|m| m.rows != rows || m.cols != cols) {
        return Err(Error::ShapeMismatch("relevance maps differ in shape".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(RELEVANCE_MAGIC).map_err(io)?;
    w.write_all(&(rows as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(cols as u32).to_le_bytes()).map_err(io)?;
    for m in maps {
        for &v in &m.values {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a `RLV1` file; the map count is implied by the file length.
pub fn read_relevance_maps(path: impl AsRef<Path>) -> Result<Vec<RelevanceMap>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != RELEVANCE_MAGIC {
        return Err(bad("not a RLV1 relevance file"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let cell = rows * cols * 4;
    if cell == 0 {
        return if body.is_empty() {
            Ok(Vec::new())
        } else {
            Err(bad("empty grid with payload"))
        };
    }
    if body.len() % cell != 0 {
        return Err(bad("payload is not a whole number of grids"));
    }
    body.chunks_exact(cell)
        .map(|grid| {
            let values = grid
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            RelevanceMap::new(rows, cols, values)
        })
        .collect()
}
