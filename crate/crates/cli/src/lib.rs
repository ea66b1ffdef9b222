//! Batch experiment front-end for `prozo`: configs, sweeps, traces and
//! summaries. The `prozo` binary is a thin wrapper around [`run`].

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{CliError, CliResult};
use crate::config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "prozo",
    version,
    about = "Zeroth-order federated optimization on manifolds"
)]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Centralized zeroth-order descent with each estimator variant.
    Centralized(RunArgs),
    /// Federated runs over every sweep point and seed.
    Federated(RunArgs),
    /// Bias, variance and isotropy probes of the estimators.
    Probe(RunArgs),
    /// Runs the built-in invariant checks.
    Selftest {
        #[arg(long, hide = true)]
        inject_failure: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated seeds, overriding `output.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

fn load(args: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seeds) = &args.seeds {
        cfg.output.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Centralized(a) => commands::cmd_centralized(&load(a)?, &a.out),
        Command::Federated(a) => commands::cmd_federated(&load(a)?, &a.out),
        Command::Probe(a) => commands::cmd_probe(&load(a)?, &a.out),
        Command::Selftest { inject_failure } => commands::cmd_selftest(inject_failure.as_deref()),
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        builder = builder.num_threads(n);
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(e) => Err(CliError::Config(format!("cannot start thread pool: {e}"))),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("prozo: {e}");
            e.exit_code()
        }
    }
}
