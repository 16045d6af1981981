//! Post-embedding analytics for wildlife re-identification.
//!
//! Everything in this crate operates on precomputed artefacts: embeddings,
//! relevance maps and detections arrive as files and are turned into
//! retrieval accuracies, tracklet decisions, faithfulness curves, population
//! estimates and tracking metrics.
//!
//! * [`datamodel`]: manifests, encounters, MOT text files.
//! * [`retrieval`]: cross-encounter k-NN identification and balanced Top-1.
//! * [`aggregation`]: per-tracklet decisions from frame-level results.
//! * [`explain`]: differentiable proxy scores and patch-flipping curves.
//! * [`clustering`]: cannot-link constrained HAC, DBSCAN, HDBSCAN, ARI/AMI.
//! * [`tracking`]: two-stage Kalman tracker and HOTA / IDF1 / CLEAR metrics.
//! * [`synth`]: seeded scenario generators used by the test suites.

pub mod aggregation;
pub mod clustering;
pub mod datamodel;
mod error;
pub mod explain;
pub mod retrieval;
pub mod synth;
pub mod tracking;
pub mod vecmath;

pub use error::{Error, Result};

/// Crate version, embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
