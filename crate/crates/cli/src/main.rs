use std::process::ExitCode;

use clap::Parser;

/// Copies flag values that were given over the resolved config.
///
/// `overlay!(args, cfg, a, b)` targets plain fields; `overlay!(args, cfg; a, b)` targets
/// `Option` fields.
macro_rules! overlay {
    ($args:expr, $cfg:expr, $($f:ident),+ $(,)?) => {
        $(if let Some(v) = &$args.$f { $cfg.$f = v.clone(); })+
    };
    ($args:expr, $cfg:expr; $($f:ident),+ $(,)?) => {
        $(if $args.$f.is_some() { $cfg.$f = $args.$f.clone(); })+
    };
}

mod cli;
mod commands;
mod config;
mod report;

use cli::{Cli, Command, ExplainCommand, ReidCommand};
use config::{config_error, ConfigError, FileConfig, DEFAULT_SEED, THREADS_ENV};

/// Non-zero exit that is not an error (e.g. `validate` found violations).
#[derive(Debug)]
pub struct Failed(pub String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

pub struct Context {
    pub seed: u64,
    pub file: FileConfig,
}

fn threads(cli: &Cli, file: &FileConfig) -> anyhow::Result<Option<usize>> {
    let n = match (cli.threads, file.threads) {
        (Some(n), _) | (None, Some(n)) => Some(n),
        (None, None) => match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| config_error(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(config_error("threads must be at least 1"));
    }
    Ok(n)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = threads(&cli, &file)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("starting thread pool: {e}"))?;
    }
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        file,
    };
    match &cli.command {
        Command::Synth(a) => commands::synth::run(a, &ctx),
        Command::Reid(ReidCommand::Eval(a)) => commands::reid::run(a, &ctx),
        Command::Explain(ExplainCommand::Curve(a)) => commands::explain::curve(a, &ctx),
        Command::Explain(ExplainCommand::Score(a)) => commands::explain::score(a, &ctx),
        Command::Census(a) => commands::census::run(a, &ctx),
        Command::Track(a) => commands::track::run(a, &ctx),
        Command::MotEval(a) => commands::track::eval(a, &ctx),
        Command::Validate(a) => commands::validate::run(a, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(f) = e.downcast_ref::<Failed>() {
                eprintln!("{f}");
                return ExitCode::from(1);
            }
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
