//! Versioned report envelope shared by every subcommand.
//!
//! Reports carry no timestamps or thread counts, so the same inputs and seed give
//! byte-identical output on every run.

use std::io::Write;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;
use serde_json::Value;

pub const TOOL: &str = "trackletlab";

#[derive(Debug, Serialize)]
pub struct Envelope<C: Serialize, R: Serialize> {
    pub schema: String,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: C,
    pub result: R,
}

pub fn envelope<C: Serialize, R: Serialize>(name: &str, seed: u64, config: C, result: R) -> Envelope<C, R> {
    Envelope {
        schema: format!("{TOOL}.{name}/1"),
        tool: TOOL,
        version: trackletlab_core::VERSION,
        seed,
        config,
        result,
    }
}

pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut s = serde_json::to_string_pretty(value).context("serialising report")?;
    s.push('\n');
    Ok(s)
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            std::fs::write(p, text).with_context(|| format!("writing report {}", p.display()))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).context("writing report to stdout")?;
            out.flush().context("writing report to stdout")
        }
    }
}

/// `# key: value` header lines that carry the envelope in CSV reports.
pub fn csv_preamble<C: Serialize>(name: &str, seed: u64, config: &C) -> anyhow::Result<String> {
    let config: Value = serde_json::to_value(config)?;
    Ok(format!(
        "# schema: {TOOL}.{name}/1\n# tool: {TOOL}\n# version: {}\n# seed: {seed}\n# config: {}\n",
        trackletlab_core::VERSION,
        serde_json::to_string(&config)?
    ))
}
