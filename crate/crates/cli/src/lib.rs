//! Command-line front end: `discover`, `infer`, `downstream` and `report`.
//!
//! Every command writes into a fresh output directory holding an echo of the
//! resolved configuration, its artifacts and a `manifest.json` with the
//! SHA-256 of each artifact. Exit codes: 0 ok, 2 config error, 3 input
//! artifact error, 4 numeric failure.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use causelab::downstream::TaskKind;
use causelab::envworld::{ObsMask, SetupName};
use clap::{Args, Parser, Subcommand};

pub use artifacts::Manifest;
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "CC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "causelab", version, about = "Discover experiments that reveal hidden block properties")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a tree of experiments on a setup.
    Discover(RunArgs),
    /// Embed environments with a trained tree.
    Infer(RunArgs),
    /// Compare fine-tuning from a discovered experiment against baselines.
    Downstream(RunArgs),
    /// Summarize earlier runs as markdown and CSV.
    Report(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Discover(_) => "discover",
            Command::Infer(_) => "infer",
            Command::Downstream(_) => "downstream",
            Command::Report(_) => "report",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Discover(a) | Command::Infer(a) | Command::Downstream(a) | Command::Report(a) => a,
        }
    }
}

fn parse_setup(s: &str) -> std::result::Result<SetupName, String> {
    s.parse().map_err(|e: causelab::Error| e.to_string())
}

fn parse_mask(s: &str) -> std::result::Result<ObsMask, String> {
    s.parse().map_err(|e: causelab::Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: causelab::Error| e.to_string())
}

/// Flags shared by all commands; values given here override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Mass, SizeMass or FrictionSizeMass.
    #[arg(long, value_parser = parse_setup)]
    pub setup: Option<SetupName>,
    /// Number of tree levels.
    #[arg(long)]
    pub k: Option<usize>,
    /// Observed coordinates: x, z or xz.
    #[arg(long, value_parser = parse_mask)]
    pub mask: Option<ObsMask>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// lifting or travel.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub target: Option<f64>,
    /// Comma-separated seeds for the downstream comparison.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Tree file for infer or downstream.
    #[arg(long, value_name = "PATH")]
    pub tree: Option<PathBuf>,
    /// Plan file for downstream, instead of a tree.
    #[arg(long, value_name = "PATH")]
    pub plan: Option<PathBuf>,
    /// JSON array of env specs for infer.
    #[arg(long, value_name = "PATH")]
    pub envs: Option<PathBuf>,
    /// Run directories to summarize.
    #[arg(long, value_delimiter = ',', value_name = "DIR")]
    pub runs: Option<Vec<PathBuf>>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            setup: self.setup,
            k: self.k,
            mask: self.mask,
            seed: self.seed,
            out: self.out.clone(),
            task: self.task,
            target: self.target,
            seeds: self.seeds.clone(),
            tree: self.tree.clone(),
            plan: self.plan.clone(),
            envs: self.envs.clone(),
            runs: self.runs.clone(),
        }
    }
}

/// Loads the config file (if any), applies flags and validates ranges.
pub fn resolve_config(command: &Command) -> Result<RunConfig> {
    let args = command.args();
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(args.overrides(), command.name());
    cfg.validate()?;
    Ok(cfg)
}

/// Sizes the global worker pool from `CC_THREADS`, if set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))
}

pub fn execute(command: &Command, cfg: &RunConfig) -> Result<Manifest> {
    match command {
        Command::Discover(_) => commands::discover(cfg),
        Command::Infer(_) => commands::infer(cfg),
        Command::Downstream(_) => commands::downstream(cfg),
        Command::Report(_) => commands::report(cfg),
    }
}

pub fn run(cli: &Cli) -> Result<Manifest> {
    configure_threads()?;
    let cfg = resolve_config(&cli.command)?;
    execute(&cli.command, &cfg)
}
