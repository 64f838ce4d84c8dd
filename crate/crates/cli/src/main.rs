use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bpre_core::harness::{emit_csv, parse_config_with, run_experiment, ConfigOverrides, ExperimentKind};
use bpre_core::BpreError;
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Experiments on supercritical branching processes in a random environment.
#[derive(Parser)]
#[command(name = "bpre", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against the assumptions and report each condition.
    Validate(Common),
    /// Simulate trajectories and report log Z_n, S_n and log W_n.
    Simulate(Common),
    /// Kolmogorov distance to the normal law over an n grid.
    BeScan(Common),
    /// Direct and tilted tail probabilities against the Cramér prediction.
    CramerScan(Common),
    /// Check the bounded Stein solution on a grid.
    SteinCheck(Common),
    /// Laplace transform of W, its tail exponent and harmonic moments.
    Wtail(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; the output does not depend on it.
    #[arg(long, env = "BPRE_WORKERS")]
    workers: Option<usize>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Validate(c) => (ExperimentKind::Validate, c),
            Command::Simulate(c) => (ExperimentKind::Simulate, c),
            Command::BeScan(c) => (ExperimentKind::BeScan, c),
            Command::CramerScan(c) => (ExperimentKind::CramerScan, c),
            Command::SteinCheck(c) => (ExperimentKind::SteinCheck, c),
            Command::Wtail(c) => (ExperimentKind::WTail, c),
        }
    }
}

fn read_config(path: &Path) -> Result<String, BpreError> {
    std::fs::read_to_string(path).map_err(|source| BpreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(kind: ExperimentKind, args: Common) -> Result<(), ExitCode> {
    let fail = |code: u8, err: &BpreError| {
        eprintln!("bpre: {err}");
        ExitCode::from(code)
    };
    let text = read_config(&args.config).map_err(|e| fail(EXIT_CONFIG, &e))?;
    let overrides = ConfigOverrides {
        kind: Some(kind),
        seed: args.seed,
        workers: args.workers,
    };
    let config = parse_config_with(&text, &overrides).map_err(|e| fail(EXIT_CONFIG, &e))?;
    let table = run_experiment(&config).map_err(|e| {
        let code = if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME };
        fail(code, &e)
    })?;
    let written = match &args.out {
        Some(path) => emit_csv(&table, path),
        None => table.write_csv(io::stdout().lock()).map_err(|source| BpreError::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    };
    written.map_err(|e| fail(EXIT_RUNTIME, &e))
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
