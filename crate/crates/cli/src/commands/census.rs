use anyhow::Context as _;
use serde_json::json;
use trackletlab_core::clustering::{run_census, Algorithm, CensusConfig, StopRule};

use super::{ensure, manifest};
use crate::cli::CensusArgs;
use crate::config::{required, AlgoName, CensusCmdConfig};
use crate::report::{emit, envelope, to_json};
use crate::{Context, Failed};

fn census_config(c: &CensusCmdConfig) -> anyhow::Result<CensusConfig> {
    let algorithm = match c.algo {
        AlgoName::Hac => {
            let stop = match c.clusters {
                Some(k) => {
                    ensure(k >= 1, || "clusters must be at least 1".into())?;
                    StopRule::Clusters(k)
                }
                None => {
                    ensure(c.threshold >= 0.0 && c.threshold <= 2.0, || {
                        format!("threshold must lie in [0, 2], got {}", c.threshold)
                    })?;
                    StopRule::Threshold(c.threshold)
                }
            };
            Algorithm::Hac {
                linkage: c.linkage,
                stop,
            }
        }
        AlgoName::Dbscan => {
            ensure(c.eps > 0.0 && c.eps <= 2.0, || {
                format!("eps must lie in (0, 2], got {}", c.eps)
            })?;
            ensure(c.min_pts >= 1, || "min_pts must be at least 1".into())?;
            Algorithm::Dbscan {
                eps: c.eps,
                min_pts: c.min_pts,
            }
        }
        AlgoName::Hdbscan => {
            ensure(c.min_cluster_size >= 2, || "min_cluster_size must be at least 2".into())?;
            ensure(c.min_samples.is_none_or(|s| s >= 1), || {
                "min_samples must be at least 1".into()
            })?;
            Algorithm::Hdbscan {
                min_cluster_size: c.min_cluster_size,
                min_samples: c.min_samples,
            }
        }
    };
    ensure(c.skew_tolerance_secs >= 0, || "skew_tolerance_secs must be >= 0".into())?;
    Ok(CensusConfig {
        unit: c.unit,
        algorithm,
        constrained: c.constrained,
        skew_tolerance_secs: c.skew_tolerance_secs,
        splits: (!c.splits.is_empty()).then(|| c.splits.clone()),
        allow_missing_timestamps: c.allow_missing_timestamps,
    })
}

pub fn run(args: &CensusArgs, ctx: &Context) -> anyhow::Result<()> {
    let mut c = ctx.file.census.clone();
    args.apply(&mut c);
    let cfg = census_config(&c)?;
    let m = manifest("census", required(&c.manifest, "manifest")?)?;
    let r = run_census(&m, &cfg).context("census")?;
    let result = json!({
        "unit": r.unit,
        "algorithm": cfg.algorithm,
        "constrained": cfg.constrained,
        "items": r.n_items,
        "population": r.population,
        "noise": r.n_noise,
        "true_population": r.true_population,
        "ari": r.ari,
        "ami": r.ami,
        "constraint_pairs": r.constraint_pairs,
        "violations": r.violations,
        "clusters": r.labels.clusters(),
        "noise_items": r.labels.noise(),
        "dendrogram": r.dendrogram,
    });
    emit(
        c.report.as_deref(),
        &to_json(&envelope("census", ctx.seed, &c, result))?,
    )?;
    if cfg.constrained && !r.violations.is_empty() {
        return Err(Failed(format!(
            "census: constraint audit found {} violated pairs",
            r.violations.len()
        ))
        .into());
    }
    Ok(())
}
