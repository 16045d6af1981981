//! Resolved run configuration: defaults, then the TOML file, then flags.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trackletlab_core::aggregation::Strategy;
use trackletlab_core::clustering::{ClusterUnit, Linkage};
use trackletlab_core::datamodel::Split;
use trackletlab_core::explain::{PerturbationOrder, PrototypeWeighting, DEFAULT_HARD_NEGATIVES, DEFAULT_TEMPERATURE};
use trackletlab_core::tracking::{TrackerConfig, DEFAULT_MATCH_IOU};

pub const DEFAULT_SEED: u64 = 42;
pub const THREADS_ENV: &str = "TRACKLETLAB_THREADS";

/// A bad configuration value or file. Exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub synth: SynthConfig,
    pub reid_eval: ReidEvalConfig,
    pub explain_curve: ExplainCurveConfig,
    pub explain_score: ExplainScoreConfig,
    pub census: CensusCmdConfig,
    pub track: TrackCmdConfig,
    pub mot_eval: MotEvalConfig,
    pub validate: ValidateConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    #[default]
    Frame,
    Tracklet,
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "frame" => Ok(Level::Frame),
            "tracklet" => Ok(Level::Tracklet),
            other => Err(format!("unknown level `{other}` (expected frame or tracklet)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReidEvalConfig {
    pub manifest: Option<PathBuf>,
    pub split: Split,
    pub k: usize,
    pub level: Level,
    pub strategy: Strategy,
    pub report: Option<PathBuf>,
}

impl Default for ReidEvalConfig {
    fn default() -> Self {
        ReidEvalConfig {
            manifest: None,
            split: Split::Test,
            k: trackletlab_core::retrieval::DEFAULT_K,
            level: Level::Frame,
            strategy: Strategy::EmbeddingMean,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainCurveConfig {
    pub manifest: Option<PathBuf>,
    pub patches: Option<PathBuf>,
    pub relevance: Option<PathBuf>,
    /// Toy linear embedder weights (JSON).
    pub embedder: Option<PathBuf>,
    pub split: Split,
    /// Both orders when absent.
    pub order: Option<PerturbationOrder>,
    pub fractions: Vec<f64>,
    pub k: usize,
    pub report: Option<PathBuf>,
}

pub fn default_fractions() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

impl Default for ExplainCurveConfig {
    fn default() -> Self {
        ExplainCurveConfig {
            manifest: None,
            patches: None,
            relevance: None,
            embedder: None,
            split: Split::Test,
            order: None,
            fractions: default_fractions(),
            k: trackletlab_core::retrieval::DEFAULT_K,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Sim,
    Proto,
    Knn,
}

impl std::str::FromStr for ScoreKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(ScoreKind::Sim),
            "proto" => Ok(ScoreKind::Proto),
            "knn" => Ok(ScoreKind::Knn),
            other => Err(format!("unknown score `{other}` (expected sim, proto or knn)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainScoreConfig {
    pub manifest: Option<PathBuf>,
    pub split: Split,
    /// Every evaluation probe of `split` when absent.
    pub record_id: Option<u64>,
    pub scores: Vec<ScoreKind>,
    pub tau: f64,
    pub k_hard: usize,
    pub prototype: PrototypeWeighting,
    pub gradient: bool,
    pub report: Option<PathBuf>,
}

impl Default for ExplainScoreConfig {
    fn default() -> Self {
        ExplainScoreConfig {
            manifest: None,
            split: Split::Test,
            record_id: None,
            scores: vec![ScoreKind::Sim, ScoreKind::Proto, ScoreKind::Knn],
            tau: DEFAULT_TEMPERATURE,
            k_hard: DEFAULT_HARD_NEGATIVES,
            prototype: PrototypeWeighting::Softmax,
            gradient: false,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoName {
    #[default]
    Hac,
    Dbscan,
    Hdbscan,
}

impl std::str::FromStr for AlgoName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hac" => Ok(AlgoName::Hac),
            "dbscan" => Ok(AlgoName::Dbscan),
            "hdbscan" => Ok(AlgoName::Hdbscan),
            other => Err(format!("unknown algorithm `{other}` (expected hac, dbscan or hdbscan)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CensusCmdConfig {
    pub manifest: Option<PathBuf>,
    pub unit: ClusterUnit,
    pub algo: AlgoName,
    pub linkage: Linkage,
    pub threshold: f64,
    /// Target cluster count; replaces the distance threshold when set.
    pub clusters: Option<usize>,
    pub eps: f64,
    pub min_pts: usize,
    pub min_cluster_size: usize,
    pub min_samples: Option<usize>,
    pub constrained: bool,
    pub skew_tolerance_secs: i64,
    /// All tracklets when empty.
    pub splits: Vec<Split>,
    pub allow_missing_timestamps: bool,
    pub report: Option<PathBuf>,
}

impl Default for CensusCmdConfig {
    fn default() -> Self {
        use trackletlab_core::clustering::{constraints, dbscan, hac, hdbscan};
        CensusCmdConfig {
            manifest: None,
            unit: ClusterUnit::Tracklet,
            algo: AlgoName::Hac,
            linkage: Linkage::Average,
            threshold: hac::DEFAULT_DISTANCE_THRESHOLD,
            clusters: None,
            eps: dbscan::DEFAULT_EPS,
            min_pts: dbscan::DEFAULT_MIN_PTS,
            min_cluster_size: hdbscan::DEFAULT_MIN_CLUSTER_SIZE,
            min_samples: None,
            constrained: false,
            skew_tolerance_secs: constraints::DEFAULT_SKEW_TOLERANCE_SECS,
            splits: Vec::new(),
            allow_missing_timestamps: false,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackCmdConfig {
    /// MOT detection file, or a directory of `<video>.txt` files.
    pub det: Option<PathBuf>,
    /// Output file, or directory when `det` is a directory.
    pub out: Option<PathBuf>,
    /// `TLV1` embeddings, row `i` for detection line `i`; a directory of `<video>.bin` when `det` is one.
    pub appearance: Option<PathBuf>,
    pub tracker: TrackerConfig,
    pub report: Option<PathBuf>,
}

pub const ALL_METRICS: &[&str] = &[
    "hota", "deta", "assa", "loca", "idf1", "idr", "idp", "idsw", "mota", "motp",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotEvalConfig {
    pub gt: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub metrics: Vec<String>,
    pub match_iou: f64,
    pub report: Option<PathBuf>,
}

impl Default for MotEvalConfig {
    fn default() -> Self {
        MotEvalConfig {
            gt: None,
            pred: None,
            metrics: ALL_METRICS.iter().map(|s| s.to_string()).collect(),
            match_iou: DEFAULT_MATCH_IOU,
            report: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub manifest: Option<PathBuf>,
    pub min_crop: Option<u32>,
    pub report: Option<PathBuf>,
}

/// Unwraps a required path.
pub fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| config_error(format!("missing required --{flag} (flag or config file)")))
}

/// Parses `0,0.05,...,1`: `...` continues the step of the two preceding values up to the next one.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>, String> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    let mut out: Vec<f64> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == "..." {
            let (Some(&b), Some(&a)) = (out.last(), out.len().checked_sub(2).and_then(|j| out.get(j))) else {
                return Err("`...` needs two values before it".into());
            };
            let end: f64 = tokens
                .get(i + 1)
                .ok_or("`...` needs an end value")?
                .parse()
                .map_err(|e| format!("bad fraction: {e}"))?;
            let step = b - a;
            if step.is_nan() || step <= 0.0 {
                return Err("`...` needs increasing values".into());
            }
            let n = ((end - a) / step).round() as i64;
            let first = out.len() - 1;
            for j in 2..=n {
                // Round to 12 decimals so 0.05 * 3 prints as 0.15.
                let v = ((a + j as f64 * step) * 1e12).round() / 1e12;
                if v > end + 1e-12 {
                    break;
                }
                out.push(v);
            }
            if out.last().is_some_and(|&l| (l - end).abs() > 1e-9) || out.len() == first + 1 {
                out.push(end);
            }
            i += 2;
        } else {
            out.push(
                tokens[i]
                    .parse()
                    .map_err(|e| format!("bad fraction `{}`: {e}", tokens[i]))?,
            );
            i += 1;
        }
    }
    Ok(out)
}
