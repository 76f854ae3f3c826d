//! Reproducible experiment runner for the AhaKV library.
//!
//! Exit codes: 0 = all checks passed, 1 = checks ran but failed,
//! 2 = invalid input.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(name = "ahakv", about = "KV-cache eviction experiments and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trial count
    #[arg(long)]
    trials: Option<usize>,
    /// Output path (file, or directory for run-toy)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the positional bias of accumulated scores and its removal
    VerifyBias(Common),
    /// Verify the entropy law, lambda calibration, and lognormal moments
    VerifyEntropy(Common),
    /// Run eviction policies end to end on the toy decoder
    RunToy(Common),
    /// Sweep the value-prior sparsity curves
    SweepSparsity(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.trials = trials;
    }
    if let Some(out) = &common.out {
        cfg.out = out.display().to_string();
    }
    if let Some(format) = common.format {
        cfg.format = format;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&ExperimentConfig) -> commands::CmdResult) =
        match &cli.command {
            Command::VerifyBias(c) => (c, commands::cmd_verify_bias),
            Command::VerifyEntropy(c) => (c, commands::cmd_verify_entropy),
            Command::RunToy(c) => (c, commands::cmd_run_toy),
            Command::SweepSparsity(c) => (c, commands::cmd_sweep_sparsity),
        };
    let cfg = match resolve(common) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
