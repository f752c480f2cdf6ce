use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dgfed::commands::{self, AccountantArgs, MseBenchArgs, SampleArgs, TrainArgs};
use dgfed::CliError;

/// Discrete Gaussian federated learning simulator.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunFlags {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `protocol.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept parameters whose per-round wrap-around probability exceeds 1e-9.
    #[arg(long)]
    override_overflow_check: bool,
    /// Run clients (or trials) on all cores; output is unchanged.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run federated training and write per-round metrics.
    Train {
        #[command(flatten)]
        flags: RunFlags,
        /// Also dump every payload and noise draw as CSV.
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Compare Monte-Carlo aggregation error with the closed-form bound.
    MseBench {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Privacy spent by `rounds` subsampled rounds.
    Accountant {
        /// Noise standard deviation, in the units of `clip`.
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        clip: f64,
        /// Quantization levels k.
        #[arg(long)]
        levels: u32,
        /// Model dimension (padded to a power of two).
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long)]
        delta: f64,
        /// Curve CSV destination (appended to standard output if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw integers from the discrete Gaussian with parameter sigma.
    Sample {
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { flags, transcript } => commands::train(&TrainArgs {
            config: flags.config,
            seed: flags.seed,
            out: flags.out,
            override_overflow_check: flags.override_overflow_check,
            transcript,
            parallel: flags.parallel,
        }),
        Command::MseBench { flags } => commands::mse_bench(&MseBenchArgs {
            config: flags.config,
            seed: flags.seed,
            out: flags.out,
            override_overflow_check: flags.override_overflow_check,
            parallel: flags.parallel,
        }),
        Command::Accountant {
            sigma,
            clip,
            levels,
            dim,
            gamma,
            rounds,
            delta,
            out,
        } => commands::accountant(&AccountantArgs {
            sigma,
            clip,
            levels,
            dim,
            gamma,
            rounds,
            delta,
            out,
        }),
        Command::Sample { sigma, count, seed, out } => commands::sample(&SampleArgs { sigma, count, seed, out }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
