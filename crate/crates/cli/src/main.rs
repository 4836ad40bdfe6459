//! `cmdp`: command-line front end for cascade MDP models.
//!
//! Exit codes: 0 success, 1 output failure, 2 parse error, 3 admissibility
//! failure, 4 numeric failure.

mod commands;
mod model_file;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Parse(String),
    Admissibility(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Admissibility(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Admissibility(m) => write!(f, "model is not admissible: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<cascade_mdp::Error> for CliError {
    fn from(e: cascade_mdp::Error) -> Self {
        use cascade_mdp::Error as E;
        match e {
            E::NonAdmissibleModel(m) => CliError::Admissibility(m),
            E::BadKind(_)
            | E::InvalidArgument(_)
            | E::InvalidProbability(_)
            | E::DimensionMismatch { .. }
            | E::BoxViolation(_)
            | E::ControlOutOfBounds { .. }
            | E::BadState(_)
            | E::IndexOutOfRange { .. }
            | E::InvalidStep(_) => CliError::Parse(e.to_string()),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "cmdp", version, about = "Solve, simulate and analyse cascade Markov decision processes")]
struct Cli {
    /// Cap on worker threads for Monte Carlo and sweeps.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the matrix Bellman equation for a model file.
    Solve(commands::SolveArgs),
    /// Simulate sample paths and estimate the expected cost.
    Simulate(commands::SimulateArgs),
    /// Solve the steady-state diversification QP for a driver distribution.
    Qp(commands::QpArgs),
    /// Sweep the diversification QP over the driver simplex.
    Sweep(commands::SweepArgs),
    /// Time the decoupled and coupled solvers as the driver grows.
    Benchmark(commands::BenchmarkArgs),
    /// Report coupling class and diagonalizability of a model file.
    Classify {
        model: PathBuf,
    },
    /// Export a built-in model to a model file.
    Zoo(commands::ZooArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Parse("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Numeric(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Qp(a) => commands::qp(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Classify { model } => commands::classify(&model),
        Command::Zoo(a) => commands::zoo(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cmdp: {e}");
            ExitCode::from(e.code())
        }
    }
}
