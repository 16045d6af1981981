pub mod census;
pub mod explain;
pub mod reid;
pub mod synth;
pub mod track;
pub mod validate;

use std::path::Path;

use anyhow::Context as _;
use trackletlab_core::datamodel::{load_manifest, Manifest};

use crate::config::config_error;

pub fn manifest(stage: &str, path: &Path) -> anyhow::Result<Manifest> {
    load_manifest(path).with_context(|| format!("{stage}: loading manifest {}", path.display()))
}

pub fn ensure(ok: bool, msg: impl FnOnce() -> String) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_error(msg()))
    }
}

pub fn check_k(k: usize) -> anyhow::Result<()> {
    ensure(k >= 1, || "k must be at least 1".into())
}
