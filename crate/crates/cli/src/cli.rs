//! Command-line surface. Every parameter is optional here so that an unset flag
//! falls through to the config file and then to the built-in default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trackletlab_core::aggregation::Strategy;
use trackletlab_core::clustering::{ClusterUnit, Linkage};
use trackletlab_core::datamodel::Split;
use trackletlab_core::explain::{PerturbationOrder, PrototypeWeighting};

use crate::config::{
    parse_fractions, AlgoName, CensusCmdConfig, ExplainCurveConfig, ExplainScoreConfig, Level, MotEvalConfig,
    ReidEvalConfig, ScoreKind, SynthConfig, TrackCmdConfig, ValidateConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "trackletlab",
    version,
    about = "Post-embedding analytics for wildlife re-identification"
)]
pub struct Cli {
    /// TOML file with per-subcommand tables; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (falls back to TRACKLETLAB_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario with known ground truth.
    Synth(SynthArgs),
    /// Retrieval evaluation.
    #[command(subcommand)]
    Reid(ReidCommand),
    /// Proxy scores and faithfulness curves.
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Cluster tracklets and estimate the population.
    Census(CensusArgs),
    /// Run the two-stage tracker over MOT detections.
    Track(TrackArgs),
    /// Score predicted tracks against ground truth.
    MotEval(MotEvalArgs),
    /// Check a manifest against every data-model invariant.
    Validate(ValidateArgs),
}

#[derive(Debug, Subcommand)]
pub enum ReidCommand {
    /// Balanced Top-1 at frame or tracklet level.
    Eval(ReidEvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum ExplainCommand {
    /// MoRF / LeRF patch-flipping curves.
    Curve(ExplainCurveArgs),
    /// Proxy scores (and gradients) for evaluation probes.
    Score(ExplainScoreArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Reid,
    Mot,
    Patch,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub kind: SynthKind,
    /// JSON scenario spec; built-in defaults when absent.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SynthArgs {
    pub fn apply(&self, c: &mut SynthConfig) {
        overlay!(self, c; spec, out);
    }
}

#[derive(Debug, Args)]
pub struct ReidEvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub level: Option<Level>,
    /// majority | confidence | mean | ptam
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// Report path; `.json` writes JSON, anything else CSV. Stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ReidEvalArgs {
    pub fn apply(&self, c: &mut ReidEvalConfig) {
        overlay!(self, c, split, k, level, strategy);
        overlay!(self, c; manifest, report);
    }
}

/// Alias so clap parses the whole list with one value parser.
type Fractions = Vec<f64>;

#[derive(Debug, Args)]
pub struct ExplainCurveArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Probe patch grids (JSON lines).
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// RLV1 relevance maps, one per grid in the same order.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Linear patch embedder weights (JSON).
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// morf | lerf; both when absent.
    #[arg(long)]
    pub order: Option<PerturbationOrder>,
    /// Comma list; `a,b,...,z` continues the step b - a up to z.
    #[arg(long, value_parser = parse_fractions)]
    pub fractions: Option<Fractions>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ExplainCurveArgs {
    pub fn apply(&self, c: &mut ExplainCurveConfig) {
        overlay!(self, c, split, k, fractions);
        overlay!(self, c; manifest, patches, relevance, embedder, order, report);
    }
}

#[derive(Debug, Args)]
pub struct ExplainScoreArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<Split>,
    /// One probe; every evaluation probe of the split when absent.
    #[arg(long)]
    pub record_id: Option<u64>,
    /// sim | proto | knn, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub score: Option<Vec<ScoreKind>>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k_hard: Option<usize>,
    /// softmax | uniform weighting of the friend prototype.
    #[arg(long)]
    pub prototype: Option<PrototypeWeighting>,
    /// Include full gradient vectors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub gradient: Option<bool>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ExplainScoreArgs {
    pub fn apply(&self, c: &mut ExplainScoreConfig) {
        overlay!(self, c, split, tau, k_hard, prototype, gradient);
        overlay!(self, c; manifest, record_id, report);
        if let Some(s) = &self.score {
            c.scores = s.clone();
        }
    }
}

#[derive(Debug, Args)]
pub struct CensusArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// tracklet | frame
    #[arg(long)]
    pub unit: Option<ClusterUnit>,
    /// hac | dbscan | hdbscan
    #[arg(long)]
    pub algo: Option<AlgoName>,
    /// average | complete | ward
    #[arg(long)]
    pub linkage: Option<Linkage>,
    /// HAC cosine-distance threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// HAC target cluster count (replaces the threshold).
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub min_cluster_size: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Apply cannot-link constraints derived from the metadata.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub constrained: Option<bool>,
    #[arg(long)]
    pub skew_tolerance_secs: Option<i64>,
    /// Restrict to these splits (repeatable).
    #[arg(long = "split")]
    pub splits: Option<Vec<Split>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub allow_missing_timestamps: Option<bool>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl CensusArgs {
    pub fn apply(&self, c: &mut CensusCmdConfig) {
        overlay!(self, c, unit, algo, linkage, threshold, eps, min_pts, min_cluster_size);
        overlay!(
            self,
            c,
            constrained,
            skew_tolerance_secs,
            splits,
            allow_missing_timestamps
        );
        overlay!(self, c; manifest, clusters, min_samples, report);
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub det: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub appearance: Option<PathBuf>,
    #[arg(long)]
    pub lambda_app: Option<f64>,
    #[arg(long)]
    pub high_thresh: Option<f64>,
    #[arg(long)]
    pub low_thresh: Option<f64>,
    #[arg(long)]
    pub iou_gate: Option<f64>,
    #[arg(long)]
    pub min_hits: Option<u32>,
    #[arg(long)]
    pub max_age: Option<u32>,
    #[arg(long)]
    pub ema_momentum: Option<f64>,
    #[arg(long)]
    pub boost: Option<f64>,
    /// Optional JSON summary.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl TrackArgs {
    pub fn apply(&self, c: &mut TrackCmdConfig) {
        overlay!(self, c; det, out, appearance, report);
        let t = &mut c.tracker;
        overlay!(
            self,
            t,
            lambda_app,
            high_thresh,
            low_thresh,
            iou_gate,
            min_hits,
            max_age,
            ema_momentum
        );
        overlay!(self, t; boost);
    }
}

#[derive(Debug, Args)]
pub struct MotEvalArgs {
    /// Ground-truth MOT file, or directory of `<video>.txt`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Comma list of metrics to report.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    #[arg(long)]
    pub match_iou: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl MotEvalArgs {
    pub fn apply(&self, c: &mut MotEvalConfig) {
        overlay!(self, c, metrics, match_iou);
        overlay!(self, c; gt, pred, report);
    }
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Flag records whose crop is smaller than this on either side.
    #[arg(long)]
    pub min_crop: Option<u32>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl ValidateArgs {
    pub fn apply(&self, c: &mut ValidateConfig) {
        overlay!(self, c; manifest, min_crop, report);
    }
}
