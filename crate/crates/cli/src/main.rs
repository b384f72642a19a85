//! `distfree`: discretization-free Bayesian reconstruction for fan-beam
//! tomography.
//!
//! ```text
//! distfree forward|invert|compare|selftest --config <path> [--out <dir>] [--seed <u64>] [--mode cone|line|point-line]
//! ```
//!
//! Exit codes: 0 success, 1 failed self-check, 2 configuration or input
//! error, 3 numerical failure.

mod commands;
mod config;
mod failure;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distfree_core::assembly::AssemblyMode;

use crate::config::{Mode, RunConfig};
use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "distfree", version, about = "Discretization-free Bayesian inversion for fan-beam tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate clean and noisy data of the configured phantom.
    Forward(Common),
    /// Condition on `data_noisy.csv` and write the posterior on the pixel grid.
    Invert(Common),
    /// Sweep the truncated comparator over the configured levels.
    Compare(Common),
    /// Run the built-in consistency checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise seed; overrides `seed` in the configuration.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Assembly mode for C12 and C22 (point-line uses line for C22).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[command(flatten)]
    common: Common,
    /// Corrupts the symmetry of C22 before the denoising check.
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<AssemblyMode>().map(Mode::from).map_err(|e| e.to_string())
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(mode) = common.mode {
        config.set_mode(mode);
    }
    let out = common.out.clone().unwrap_or_else(|| config.output.clone());
    Ok((config, out))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Forward(c) => {
            let (config, out) = load(&c)?;
            commands::forward(&config, &out)
        }
        Command::Invert(c) => {
            let (config, out) = load(&c)?;
            commands::invert(&config, &out)
        }
        Command::Compare(c) => {
            let (config, out) = load(&c)?;
            commands::compare(&config, &out)
        }
        Command::Selftest(s) => {
            let (config, _) = load(&s.common)?;
            selftest::selftest(&config, s.inject_fault)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            commands::log(format!("error: {f}"));
            ExitCode::from(f.exit_code())
        }
    }
}
