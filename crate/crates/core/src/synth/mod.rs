//! Seeded scenario generators with known ground truth.
//!
//! All randomness comes from `ChaCha8Rng` seeded by the spec, so a spec
//! produces the same bytes on every platform.

pub mod mot;
pub mod patches;
pub mod reid;

use rand::Rng;
use rand_distr::StandardNormal;

pub use mot::{crossing_scenario, gen_mot_scenario, MotObject, MotScenario, MotSpec, Occlusion, OcclusionMode};
pub use patches::{
    gen_patch_scenario, read_patch_grids, write_patch_grids, PatchScenario, PatchSpec, ToyPatchEmbedder,
};
pub use reid::{gen_reid_scenario, ReidScenario, ReidSpec};

use crate::vecmath::normalized;
use crate::Result;

/// Uniform random direction in `dim` dimensions.
pub(crate) fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(v) = normalized(&g) {
            return v;
        }
    }
}

/// Normalizes and rounds to f32 precision, so the vector survives a file round trip unchanged.
pub(crate) fn stored_unit(raw: &[f64]) -> Result<Vec<f64>> {
    Ok(normalized(raw)?.into_iter().map(|x| x as f32 as f64).collect())
}
