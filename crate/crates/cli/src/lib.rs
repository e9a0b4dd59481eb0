//! Experiment runner for the `vfgnn` binary.
//!
//! Each subcommand reads an [`ExperimentConfig`], repeats its runs once per
//! seed (in parallel, results kept in seed order) and writes metrics as JSON
//! lines. Exit codes: 0 on success, 1 when a run fails or a check does not
//! hold, 2 for bad flags, configs or input files.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::ExperimentConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "vfgnn", version, about = "Vertically federated GraphSAGE experiments")]
pub struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output file (metrics or report); stdout when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Write an SVG accuracy chart (train and dp-sweep).
    #[arg(long, global = true, value_name = "PATH")]
    pub plot: Option<PathBuf>,
    /// Suppress progress and warnings on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train with the configured partition and write per-epoch metrics.
    Train,
    /// Isolated, federated (per combination strategy) and centralized accuracy.
    Compare,
    /// Accuracy against epsilon for each publication mechanism.
    DpSweep,
    /// Run one epoch and check message counts against the closed forms.
    CommAudit,
}

/// Resolved settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub quiet: bool,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config.seeds = vec![seed];
        }
        config.validate()?;
        let out = cli.out.clone().or_else(|| config.out.clone());
        Ok(Context { config, out, plot: cli.plot.clone(), quiet: cli.quiet })
    }

    pub fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Context::from_cli(cli)?;
    match cli.command {
        Command::Train => commands::train::run(&ctx),
        Command::Compare => commands::compare::run(&ctx),
        Command::DpSweep => commands::dp_sweep::run(&ctx),
        Command::CommAudit => commands::comm_audit::run(&ctx),
    }
}
