use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use groupreg::io::run::{run_evaluate, run_register, run_synth, RunOptions};

/// Group-wise diffeomorphic registration of image time series.
///
/// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 I/O or
/// file-format error, 4 optimization diverged, 5 input validation error.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a group of volumes and write fields, warped volumes and metrics.
    Register(Common),
    /// Generate a synthetic misaligned group with ground truth.
    Synth(Common),
    /// Recompute the metrics report from stored deformation fields.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions {
            config: c.config,
            seed: c.seed,
            out: c.out,
            quiet: c.quiet,
        }
    }
}

fn main() -> ExitCode {
    let code = match Cli::parse().command {
        Command::Register(c) => run_register(&c.into()),
        Command::Synth(c) => run_synth(&c.into()),
        Command::Evaluate(c) => run_evaluate(&c.into()),
    };
    ExitCode::from(code as u8)
}
