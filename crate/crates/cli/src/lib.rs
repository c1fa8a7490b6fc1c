//! Command-line driver for `nfpe`: strict TOML configuration, run
//! directories with checksummed manifests, and one subcommand per library
//! capability.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 solver failure,
//! 4 invariant violation (suppressed by `--no-strict`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "nfpe", version, about = "Nonlinear Fokker-Planck solver, diagnostics and particle simulator")]
pub struct Cli {
    /// Report invariant-monitor failures without failing the command.
    #[arg(long, global = true)]
    pub no_strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Heat,
    Barenblatt,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model hypotheses and print the validation report.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Sample r in [-range, range].
        #[arg(long, default_value_t = 10.0)]
        range: f64,
    },
    /// Solve y + lambda A y = f once.
    Resolvent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute the implicit Euler trajectory.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Exponential formula refinement study.
    Convergence {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Uniqueness functional between two runs.
    Verify {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        floor: Option<f64>,
        #[arg(long)]
        slack: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// L1 error of a run against an analytic solution.
    Compare {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum)]
        oracle: Oracle,
        /// `key=value` pairs, e.g. `sigma0=0.5,mean=0` or `m=2,t0=0.01`.
        #[arg(long)]
        params: Option<String>,
        #[arg(long)]
        max_error: Option<f64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Particle simulation driven by a solved run.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pde_run: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Interacting mode with this many rounds.
        #[arg(long)]
        self_consistent: Option<usize>,
    },
}

/// Caps the global thread pool at `NFPE_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("NFPE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("NFPE_THREADS must be a positive integer, got '{v}'")))?;
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let strict_off = cli.no_strict;
    match &cli.command {
        Command::Validate { config, output, range } => commands::validate(config, output.as_deref(), *range, strict_off),
        Command::Resolvent { config, input, lambda, output } => {
            commands::resolvent_cmd(config, input, *lambda, output, strict_off)
        }
        Command::Solve { config, output_dir } => commands::solve(config, output_dir.as_deref(), strict_off),
        Command::Convergence { config, output_dir } => commands::convergence(config, output_dir.as_deref(), strict_off),
        Command::Verify { run_a, run_b, eps, floor, slack, output_dir } => commands::verify(
            commands::VerifyArgs {
                run_a,
                run_b,
                eps: *eps,
                floor: *floor,
                slack: *slack,
                output_dir: output_dir.as_deref(),
            },
            strict_off,
        ),
        Command::Compare { run, oracle, params, max_error, output_dir } => commands::compare(
            commands::CompareArgs {
                run,
                oracle: match oracle {
                    Oracle::Heat => "heat",
                    Oracle::Barenblatt => "barenblatt",
                },
                params: params.as_deref(),
                max_error: *max_error,
                output_dir: output_dir.as_deref(),
            },
            strict_off,
        ),
        Command::Simulate { config, pde_run, particles, seed, output_dir, self_consistent } => commands::simulate(
            commands::SimulateArgs {
                config,
                pde_run,
                particles: *particles,
                seed: *seed,
                output_dir: output_dir.as_deref(),
                self_consistent: *self_consistent,
            },
            strict_off,
        ),
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
