//! `horizon-est`: simulation, offline estimation, observability checks,
//! horizon design and sampling sweeps.
//!
//! Exit codes: 0 success (or verdict true), 1 verdict false, 2 invalid
//! configuration or arguments, 3 model-domain error, 4 I/O error, 5 solver
//! did not converge (results are still written).

mod commands;
mod config;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use horizon_est::Error;

#[derive(Debug, Parser)]
#[command(name = "horizon-est", version, about = "Sample-based moving horizon estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip SVG output.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the scenario and write trajectory.csv.
    Simulate(RunArgs),
    /// Run the estimator over a recorded trajectory CSV and write result.csv.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        /// Trajectory CSV with `t, available, y_*` (and optionally `u_*`, `x_*`).
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Sampled observability and detectability of a linear pair (A, C).
    Observability {
        /// CSV with header `n,p`, then the rows of A and of C.
        #[arg(long)]
        matrices: PathBuf,
        /// Gap pattern, e.g. `3` or `2,5`.
        #[arg(long, value_delimiter = ',', required = true)]
        pattern: Vec<u64>,
        /// Window length T (defaults to n times the largest gap).
        #[arg(long)]
        window: Option<u64>,
        #[arg(long, default_value_t = horizon_est::detectability::DEFAULT_RANK_FACTOR)]
        rank_factor: f64,
        #[arg(long, default_value_t = horizon_est::detectability::DEFAULT_CIRCLE_TOL)]
        circle_tol: f64,
    },
    /// Smallest horizon certified by an i-IOSS certificate.
    DesignHorizon {
        /// JSON with `p1`, `p2`, `q`, `r`, `eta`.
        #[arg(long)]
        cert: PathBuf,
        #[arg(long, default_value_t = 1)]
        d_max: u64,
    },
    /// RMSE for several sampling schedules over several seeds; writes sweep.csv.
    Sweep(RunArgs),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    ModelDomain(String),
    Io(String),
    Solver(String),
}

impl CliError {
    pub fn from_core(e: Error) -> Self {
        let msg = e.to_string();
        match e.root() {
            Error::ModelDomain { .. } | Error::Divergence { .. } => CliError::ModelDomain(msg),
            Error::Io(_) => CliError::Io(msg),
            Error::Csv(c) if c.is_io_error() => CliError::Io(msg),
            Error::LinearAlgebra(_) => CliError::Solver(msg),
            _ => CliError::Config(msg),
        }
    }

    pub fn with_context(self, ctx: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{ctx}: {m}")),
            CliError::ModelDomain(m) => CliError::ModelDomain(format!("{ctx}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{ctx}: {m}")),
            CliError::Solver(m) => CliError::Solver(format!("{ctx}: {m}")),
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::ModelDomain(_) => 3,
            CliError::Io(_) => 4,
            CliError::Solver(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::ModelDomain(m) => write!(f, "model error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Solver(m) => write!(f, "solver error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::from_core(e)
    }
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Success,
    VerdictFalse,
    NotConverged,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a.config, a.out.as_deref(), a.seed, a.no_plot),
        Command::Estimate { run, measurements } => {
            commands::estimate(&run.config, &measurements, run.out.as_deref(), run.seed, run.no_plot)
        }
        Command::Observability {
            matrices,
            pattern,
            window,
            rank_factor,
            circle_tol,
        } => commands::observability(&matrices, pattern, window, rank_factor, circle_tol),
        Command::DesignHorizon { cert, d_max } => commands::design_horizon(&cert, d_max),
        Command::Sweep(a) => commands::sweep(&a.config, a.out.as_deref(), a.seed, a.no_plot),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::VerdictFalse) => ExitCode::from(1),
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: some window problems did not converge");
            ExitCode::from(5)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
