//! `mediate`: solve, verify, compare against the discrete oracle, simulate and
//! sweep bilateral-trade mediation instances.
//!
//! Exit codes: 0 success or feasible, 1 infeasible, 2 input error, 3 a model
//! assumption failed.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const WORKERS_ENV: &str = "MEDIATION_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "mediate", version, about = "Optimal mediated bilateral trade")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve an instance; writes mechanism.csv, summary.json and instance.json.
    Solve(SolveArgs),
    /// Check every incentive constraint; exits 1 if any is violated.
    Verify(VerifyArgs),
    /// Compare the closed form with the exhaustive discrete optimum.
    OracleCompare(CompareArgs),
    /// Monte Carlo run of the optimal mechanism plus deviation probes.
    Simulate(SimulateArgs),
    /// One summary row per parameter value.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Solver grid points on T.
    #[arg(long, default_value_t = mediation::solver::DEFAULT_GRID_POINTS)]
    grid_t: usize,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Mechanism CSV to check; solves the instance when absent.
    #[arg(long)]
    mechanism: Option<PathBuf>,
    /// Seller payment for a loaded mechanism (defaults to the reserve).
    #[arg(long)]
    pay_seller: Option<f64>,
    /// Type grid points.
    #[arg(long, default_value_t = mediation::verify::DEFAULT_GRID)]
    grid_t: usize,
    /// Quality grid points.
    #[arg(long, default_value_t = mediation::verify::DEFAULT_GRID)]
    grid_q: usize,
    /// Largest violation still counted as satisfied.
    #[arg(long, default_value_t = mediation::verify::DEFAULT_TOLERANCE)]
    tol: f64,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Square grid sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 12, 16, 32])]
    sizes: Vec<usize>,
    /// Largest candidate count searched exhaustively.
    #[arg(long, default_value_t = mediation::oracle::DEFAULT_LIMIT)]
    limit: u128,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1_000_000)]
    runs: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random (true, report) deviation probes.
    #[arg(long, default_value_t = 100)]
    probes: usize,
    /// Paired draws per probe.
    #[arg(long, default_value_t = 10_000)]
    probe_runs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Axis {
    /// The seller's reserve value.
    Reserve,
    /// Oracle grid size; writes the convergence CSV.
    GridSize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Explicit values, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["from", "to", "step"])]
    values: Option<Vec<f64>>,
    #[arg(long, requires_all = ["to", "step"])]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Solver grid points per row.
    #[arg(long, default_value_t = mediation::solver::DEFAULT_GRID_POINTS)]
    solver_grid: usize,
    /// Verifier type grid per row.
    #[arg(long, default_value_t = mediation::verify::DEFAULT_GRID)]
    grid_t: usize,
    /// Verifier quality grid per row.
    #[arg(long, default_value_t = mediation::verify::DEFAULT_GRID)]
    grid_q: usize,
    #[arg(long, default_value_t = mediation::verify::DEFAULT_TOLERANCE)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::configure_workers().and_then(|()| match cli.command {
        Command::Solve(a) => commands::solve(a),
        Command::Verify(a) => commands::verify(a),
        Command::OracleCompare(a) => commands::oracle_compare(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Sweep(a) => commands::sweep(a),
    });
    match result {
        Ok(status) => status.into(),
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
