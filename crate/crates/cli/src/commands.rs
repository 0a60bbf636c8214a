use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use mediation::io::{read_mechanism_csv, write_mechanism_csv, Summary};
use mediation::mechanism::Mechanism;
use mediation::model::{self, ProblemInstance};
use mediation::oracle::{compare, Enumerator};
use mediation::sim;
use mediation::solver::{revenue, trade_probability, SolveError, Solver, ThresholdMechanism};
use mediation::verify::{StructureReport, Verifier};
use serde::Serialize;

use crate::{Axis, CompareArgs, SimulateArgs, SolveArgs, SweepArgs, VerifyArgs, WORKERS_ENV};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    Infeasible,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        match s {
            Status::Done => ExitCode::SUCCESS,
            Status::Infeasible => ExitCode::from(1),
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Assumption { check: String, detail: String },
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Input(_) => ExitCode::from(2),
            Failure::Assumption { .. } => ExitCode::from(3),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn label(check: &str) -> &str {
    match check {
        model::CHECK_RANGE => "non-trivial range",
        model::CHECK_MHR => "monotone hazard rate",
        model::CHECK_ALPHA => "alpha positive and increasing",
        model::CHECK_VALUATION_SHAPE => "valuation increasing and concave in t",
        model::CHECK_CROSS_PARTIAL => "valuation cross-partial bound",
        model::CHECK_DENSITIES => "positive densities",
        other => other,
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(e) => write!(f, "{e:#}"),
            Failure::Assumption { check, detail } if detail.starts_with(label(check)) => {
                write!(f, "{check}: {detail}")
            }
            Failure::Assumption { check, detail } => {
                write!(f, "{} assumption failed ({check}): {detail}", label(check))
            }
        }
    }
}

type Outcome = Result<Status, Failure>;

pub fn configure_workers() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting worker pool")?;
    Ok(())
}

fn load_instance(path: &Path) -> Result<ProblemInstance, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // The model error already carries the parser's message.
    ProblemInstance::from_json(&text).map_err(|e| input(format!("parsing {}: {e}", path.display())))
}

fn solve_with(inst: &ProblemInstance, grid: usize) -> Result<ThresholdMechanism, Failure> {
    Solver::with_grid(grid).solve(inst).map_err(|e| match e {
        SolveError::Assumption { check, detail } => Failure::Assumption { check, detail },
        other => Failure::Input(other.into()),
    })
}

fn out_dir(path: &Path) -> Result<PathBuf, Failure> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

fn check_grid(flag: &str, n: usize) -> Result<(), Failure> {
    if n < 2 {
        return Err(input(format!("--{flag} needs at least 2 points, got {n}")));
    }
    Ok(())
}

fn check_tolerance(tol: f64) -> Result<(), Failure> {
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(input(format!("--tol must be finite and non-negative, got {tol}")));
    }
    Ok(())
}

pub fn solve(args: SolveArgs) -> Outcome {
    check_grid("grid-t", args.grid_t)?;
    let inst = load_instance(&args.common.instance)?;
    let mech = solve_with(&inst, args.grid_t)?;
    let dir = out_dir(&args.common.out)?;
    let mut csv = Vec::new();
    write_mechanism_csv(&mech, &mut csv).context("formatting mechanism")?;
    write(&dir, "mechanism.csv", csv)?;
    let summary = Summary::of(&mech);
    write(&dir, "summary.json", summary.to_json() + "\n")?;
    write(
        &dir,
        "instance.json",
        inst.to_json().context("serializing instance")? + "\n",
    )?;
    println!("t1 = {}", summary.t1);
    println!("t2 = {}", summary.t2);
    println!("revenue = {}", summary.revenue);
    Ok(Status::Done)
}

/// First grid type whose threshold drops below `q_hi` and first type whose
/// threshold reaches `q_lo`.
fn sampled_cutoffs<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, grid: &[f64]) -> (f64, f64) {
    let t1 = grid
        .iter()
        .copied()
        .find(|&t| mech.threshold(t) < inst.q_hi())
        .unwrap_or(inst.t_hi());
    let t2 = grid
        .iter()
        .copied()
        .find(|&t| mech.threshold(t) <= inst.q_lo())
        .unwrap_or(inst.t_hi());
    (t1, t2)
}

pub fn verify(args: VerifyArgs) -> Outcome {
    check_grid("grid-t", args.grid_t)?;
    check_grid("grid-q", args.grid_q)?;
    check_tolerance(args.tol)?;
    let inst = load_instance(&args.common.instance)?;
    let verifier = Verifier::new(args.grid_t, args.grid_q, args.tol);
    let (report, structure): (_, StructureReport) = match &args.mechanism {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let mech = read_mechanism_csv(file, args.pay_seller.unwrap_or(inst.reserve))
                .with_context(|| format!("reading {}", path.display()))?;
            let (t1, t2) = sampled_cutoffs(&inst, &mech, mech.grid());
            (
                verifier.verify(&inst, &mech),
                verifier.check_structure(&inst, &mech, t1, t2),
            )
        }
        None => {
            let mech = solve_with(&inst, mediation::solver::DEFAULT_GRID_POINTS)?;
            (
                verifier.verify(&inst, &mech),
                verifier.check_structure(&inst, &mech, mech.t1(), mech.t2()),
            )
        }
    };
    let dir = out_dir(&args.common.out)?;
    write(&dir, "report.json", to_json(&report))?;
    write(&dir, "structure.json", to_json(&structure))?;
    print!("{}", report.to_table());
    for c in structure.checks.iter().filter(|c| !c.passed) {
        println!("structure check {} failed: {:.3e}", c.name, c.worst_violation);
    }
    if report.feasible {
        println!("feasible");
        Ok(Status::Done)
    } else {
        let names: Vec<_> = report.violations().map(|c| c.name.as_str()).collect();
        println!("infeasible: {}", names.join(", "));
        Ok(Status::Infeasible)
    }
}

pub fn oracle_compare(args: CompareArgs) -> Outcome {
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(input("--sizes needs positive grid sizes"));
    }
    let inst = load_instance(&args.common.instance)?;
    let mech = solve_with(&inst, mediation::solver::DEFAULT_GRID_POINTS)?;
    let enumerator = Enumerator {
        limit: args.limit,
        ..Enumerator::default()
    };
    let report = compare(&inst, &mech, &args.sizes, &enumerator).context("discrete comparison")?;
    let dir = out_dir(&args.common.out)?;
    write(&dir, "comparison.csv", report.to_csv())?;
    write(&dir, "comparison.json", to_json(&report))?;
    print!("{}", report.to_csv());
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
struct SimulationOutput {
    #[serde(flatten)]
    result: sim::SimulationResult,
    quadrature_revenue: f64,
    quadrature_trade_probability: f64,
    probe_runs: u64,
    max_probe_z: Option<f64>,
    probes: Vec<sim::Probe>,
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    if args.runs == 0 {
        return Err(input("--runs must be positive"));
    }
    if args.probes > 0 && args.probe_runs == 0 {
        return Err(input("--probe-runs must be positive"));
    }
    let inst = load_instance(&args.common.instance)?;
    let mech = solve_with(&inst, mediation::solver::DEFAULT_GRID_POINTS)?;
    let result = sim::run(&inst, &mech, args.runs, args.seed);
    let probes = sim::probe_deviations(&inst, &mech, args.probes, args.probe_runs, args.seed);
    let out = SimulationOutput {
        quadrature_revenue: revenue(&inst, &mech),
        quadrature_trade_probability: trade_probability(&inst, &mech),
        probe_runs: args.probe_runs,
        max_probe_z: probes.iter().map(|p| p.z).reduce(f64::max),
        probes,
        result,
    };
    let dir = out_dir(&args.common.out)?;
    write(&dir, "simulation.json", to_json(&out))?;
    write(&dir, "buckets.csv", out.result.buckets_csv())?;
    println!(
        "mean revenue = {} (se {}), quadrature = {}",
        out.result.mean_revenue, out.result.se_revenue, out.quadrature_revenue
    );
    println!(
        "trade rate = {}, quadrature = {}",
        out.result.trade_rate, out.quadrature_trade_probability
    );
    if let Some(z) = out.max_probe_z {
        println!(
            "largest deviation gain over {} probes: {z:.3} standard errors",
            out.probes.len()
        );
    }
    Ok(Status::Done)
}

/// Sweep values from an explicit list or an inclusive arithmetic range.
fn sweep_values(args: &SweepArgs) -> Result<Vec<f64>, Failure> {
    let values = match (&args.values, args.from, args.to, args.step) {
        (Some(v), ..) => v.clone(),
        (None, Some(from), Some(to), Some(step)) => {
            if !(step > 0.0 && from.is_finite() && to.is_finite()) {
                return Err(input("--step must be positive and the range finite"));
            }
            if to < from {
                Vec::new()
            } else {
                // Inclusive of `to` up to rounding of the step count.
                let n = ((to - from) / step + 1e-9).floor() as usize;
                // Snap to 1e-12 so that 0.2 + 2 * 0.2 prints as 0.6.
                (0..=n)
                    .map(|i| ((from + step * i as f64) * 1e12).round() / 1e12)
                    .collect()
            }
        }
        _ => return Err(input("give --values or --from/--to/--step")),
    };
    if values.is_empty() {
        return Err(input("sweep range is empty"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(input("sweep values must be finite"));
    }
    Ok(values)
}

fn input(msg: impl fmt::Display) -> Failure {
    Failure::Input(anyhow!("{msg}"))
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let values = sweep_values(&args)?;
    check_grid("grid-t", args.grid_t)?;
    check_grid("grid-q", args.grid_q)?;
    check_grid("solver-grid", args.solver_grid)?;
    check_tolerance(args.tol)?;
    let inst = load_instance(&args.common.instance)?;
    let dir = out_dir(&args.common.out)?;
    match args.axis {
        Axis::GridSize => {
            let sizes = values
                .iter()
                .map(|&v| {
                    if v >= 1.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(input(format!("grid size {v} is not a positive integer")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mech = solve_with(&inst, args.solver_grid)?;
            let report = compare(&inst, &mech, &sizes, &Enumerator::default()).context("discrete comparison")?;
            write(&dir, "sweep.csv", report.to_csv())?;
            print!("{}", report.to_csv());
        }
        Axis::Reserve => {
            let verifier = Verifier::new(args.grid_t, args.grid_q, args.tol);
            let mut csv = String::from(
                "reserve,status,t1,t2,revenue,revenue_rewritten,trade_probability,feasible,worst_violation\n",
            );
            for &r in &values {
                let mut row = inst.clone();
                row.reserve = r;
                match Solver::with_grid(args.solver_grid).solve(&row) {
                    Ok(mech) => {
                        let s = Summary::of(&mech);
                        let rep = verifier.verify(&row, &mech);
                        csv.push_str(&format!(
                            "{r},ok,{},{},{},{},{},{},{:e}\n",
                            s.t1,
                            s.t2,
                            s.revenue,
                            s.revenue_rewritten,
                            trade_probability(&row, &mech),
                            rep.feasible,
                            rep.worst_violation()
                        ));
                    }
                    Err(e) => {
                        let status = e.check().unwrap_or("error").to_string();
                        csv.push_str(&format!("{r},{status},,,,,,,\n"));
                    }
                }
            }
            write(&dir, "sweep.csv", &csv)?;
            print!("{csv}");
        }
    }
    Ok(Status::Done)
}
