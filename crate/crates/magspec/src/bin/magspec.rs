use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use magspec::cli::{self, Command, RunOptions};
use magspec::config::RunConfig;

/// Numerical pipelines for the magnetic Schrodinger stability experiments.
#[derive(Parser)]
#[command(name = "magspec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Run configuration (TOML); defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for tables, reports, and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Enforce quality thresholds as hard failures (exit code 4).
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Eigenvalue datasets for both potential pairs plus the spectral
    /// distance report.
    Spectra,
    /// Geodesic ray transforms of the first pair and round-trip checks.
    Raytransform,
    /// Progressing-wave residual scaling and remainder bounds.
    Gocheck,
    /// Spectral-to-hyperbolic bridge and resolvent series checks.
    Bridge,
    /// Full two-potential reconstruction from boundary spectral data.
    Reconstruct,
    /// Amplitude sweep fitting the empirical stability exponents.
    Sweep,
    /// Every stage in sequence, sharing one manifest.
    All,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cmd = match args.command {
        Cmd::Spectra => Command::Spectra,
        Cmd::Raytransform => Command::Raytransform,
        Cmd::Gocheck => Command::Gocheck,
        Cmd::Bridge => Command::Bridge,
        Cmd::Reconstruct => Command::Reconstruct,
        Cmd::Sweep => Command::Sweep,
        Cmd::All => Command::All,
    };
    let opts = RunOptions {
        out: args.out,
        seed: args.seed,
        workers: args.workers,
        strict: args.strict,
    };
    match cli::run(cmd, &cfg, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
