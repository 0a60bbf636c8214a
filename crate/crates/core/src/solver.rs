//! Optimal threshold mechanism and the analysis quantities built on it.
//!
//! The threshold `lambda(t)` is the zero of the virtual surplus in `q`
//! (clamped to Q), located by bisection at every evaluation point. Buyer
//! payments come from the envelope formula, with the running integral of
//! `R_b` anchored on a dense grid and completed inside a cell by quadrature.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::Mechanism;
use crate::model::{ProblemInstance, ValidationReport, Valuation, CHECK_MHR, CHECK_RANGE};
use crate::quad::Integrator;
use crate::roots::{bisect, bisect_predicate};

pub const DEFAULT_GRID_POINTS: usize = 2049;

/// Below this posterior mass the payment formula is replaced by its limit.
const SURVIVAL_FLOOR: f64 = 1e-12;

const OUTER_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("instance fails {check}: {detail}")]
    Assumption { check: String, detail: String },
    #[error("grid needs at least 2 points, got {0}")]
    Grid(usize),
}

impl SolveError {
    pub fn check(&self) -> Option<&str> {
        match self {
            SolveError::Assumption { check, .. } => Some(check),
            SolveError::Grid(_) => None,
        }
    }
}

/// Virtual surplus `eta(q, t)`.
pub fn eta(inst: &ProblemInstance, q: f64, t: f64) -> f64 {
    eta_slice(inst, t)(q)
}

/// `eta(., t)` with the inverse hazard at `t` evaluated once.
fn eta_slice(inst: &ProblemInstance, t: f64) -> impl Fn(f64) -> f64 + '_ {
    let ih = inst.t_dist.inv_hazard(t);
    let r = inst.reserve;
    move |q| match &inst.valuation {
        Valuation::Linear { alpha } => alpha.value(q) * (t - ih) - r,
        _ => inst.value(q, t) - inst.value_t(q, t) * ih - r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaPartials {
    pub eta_q: f64,
    pub eta_t: f64,
}

pub fn eta_partials(inst: &ProblemInstance, q: f64, t: f64) -> EtaPartials {
    let ih = inst.t_dist.inv_hazard(t);
    let ih_slope = inst.t_dist.inverse_hazard_slope(t);
    match &inst.valuation {
        Valuation::Linear { alpha } => EtaPartials {
            eta_q: alpha.derivative(q) * (t - ih),
            eta_t: alpha.value(q) * (1.0 - ih_slope),
        },
        _ => {
            let v_t = inst.value_t(q, t);
            EtaPartials {
                eta_q: inst.value_q(q, t) - inst.value_qt(q, t) * ih,
                eta_t: v_t - inst.value_tt(q, t) * ih - v_t * ih_slope,
            }
        }
    }
}

/// Optimal threshold: `q_lo` when trade is profitable for every quality,
/// `q_hi` when it is profitable for none, else the root of `eta(., t)`.
pub fn threshold(inst: &ProblemInstance, t: f64) -> f64 {
    let (lo, hi) = (inst.q_lo(), inst.q_hi());
    let e = eta_slice(inst, t);
    if e(lo) >= 0.0 {
        return lo;
    }
    if e(hi) <= 0.0 {
        return hi;
    }
    bisect(&e, lo, hi, 0.0)
}

/// `(t1, t2)` for the optimal threshold: the first type recommended to buy with
/// positive probability and the last type whose threshold exceeds `q_lo`.
pub fn cutoffs(inst: &ProblemInstance) -> (f64, f64) {
    cutoffs_of(&|t| threshold(inst, t), inst)
}

/// Cutoffs of an arbitrary non-increasing threshold function.
fn cutoffs_of(lambda: &dyn Fn(f64) -> f64, inst: &ProblemInstance) -> (f64, f64) {
    let (q_lo, q_hi) = (inst.q_lo(), inst.q_hi());
    let (t_lo, t_hi) = (inst.t_lo(), inst.t_hi());
    let t1 = boundary(|t| lambda(t) < q_hi, t_lo, t_hi);
    let t2 = boundary(|t| lambda(t) <= q_lo, t_lo, t_hi);
    (t1, t2)
}

/// First point of `[lo, hi]` where a monotone predicate turns true
/// (`lo` if it already holds there, `hi` if it never does).
fn boundary(pred: impl Fn(f64) -> bool, lo: f64, hi: f64) -> f64 {
    if pred(lo) {
        lo
    } else if !pred(hi) {
        hi
    } else {
        bisect_predicate(pred, lo, hi, 0.0)
    }
}

#[derive(Clone)]
enum Rule {
    Optimal,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// A threshold mechanism with envelope payments and `P_s = r`.
///
/// `lambda`, `R_b`, `P_b` and `U_b` are exact at any type; the grid only
/// anchors the running integral of `R_b`.
#[derive(Clone)]
pub struct ThresholdMechanism {
    instance: ProblemInstance,
    rule: Rule,
    t1: f64,
    t2: f64,
    grid: Vec<f64>,
    lambda: Vec<f64>,
    r_b: Vec<f64>,
    /// `int_{t1}^{grid[i]} R_b`
    cumulative: Vec<f64>,
    pay: Vec<f64>,
    price_below_t1: f64,
}

impl fmt::Debug for ThresholdMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThresholdMechanism")
            .field("optimal", &matches!(self.rule, Rule::Optimal))
            .field("t1", &self.t1)
            .field("t2", &self.t2)
            .field("grid_points", &self.grid.len())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solver {
    pub grid_points: usize,
    /// When false, the non-trivial range check is reported but not enforced.
    pub require_range: bool,
}

impl Default for Solver {
    fn default() -> Self {
        Self {
            grid_points: DEFAULT_GRID_POINTS,
            require_range: true,
        }
    }
}

impl Solver {
    pub fn with_grid(grid_points: usize) -> Self {
        Self {
            grid_points,
            ..Self::default()
        }
    }

    pub fn solve(&self, inst: &ProblemInstance) -> Result<ThresholdMechanism, SolveError> {
        let report = inst.validate();
        refuse_on_failures(&report, self.require_range)?;
        ThresholdMechanism::build(inst.clone(), Rule::Optimal, self.grid_points)
    }
}

fn refuse_on_failures(report: &ValidationReport, require_range: bool) -> Result<(), SolveError> {
    // MHR first: it is the assumption the optimality argument rests on.
    let mut failures: Vec<_> = report
        .failures()
        .filter(|c| require_range || c.name != CHECK_RANGE)
        .collect();
    failures.sort_by_key(|c| c.name != CHECK_MHR);
    match failures.first() {
        None => Ok(()),
        Some(c) if c.name == CHECK_MHR => Err(SolveError::Assumption {
            check: c.name.clone(),
            detail: format!("monotone hazard rate assumption violated; {}", c.detail),
        }),
        Some(c) => Err(SolveError::Assumption {
            check: c.name.clone(),
            detail: c.detail.clone(),
        }),
    }
}

/// Solves with the default grid.
pub fn solve(inst: &ProblemInstance) -> Result<ThresholdMechanism, SolveError> {
    Solver::default().solve(inst)
}

impl ThresholdMechanism {
    /// Threshold mechanism for an arbitrary non-increasing `lambda` (clamped to
    /// Q) with envelope payments, `U_b(t_lo) = 0` and `P_s = r`. No instance
    /// checks are run.
    pub fn from_threshold(
        inst: &ProblemInstance,
        lambda: impl Fn(f64) -> f64 + Send + Sync + 'static,
        grid_points: usize,
    ) -> Result<Self, SolveError> {
        Self::build(inst.clone(), Rule::Custom(Arc::new(lambda)), grid_points)
    }

    fn build(instance: ProblemInstance, rule: Rule, grid_points: usize) -> Result<Self, SolveError> {
        if grid_points < 2 {
            return Err(SolveError::Grid(grid_points));
        }
        let (t1, t2) = match &rule {
            Rule::Optimal => cutoffs(&instance),
            Rule::Custom(f) => {
                let (lo, hi) = (instance.q_lo(), instance.q_hi());
                cutoffs_of(&|t| f(t).clamp(lo, hi), &instance)
            }
        };
        debug_assert!(t1 <= t2, "t1 = {t1} > t2 = {t2}");

        let (t_lo, t_hi) = (instance.t_lo(), instance.t_hi());
        let n = grid_points - 1;
        let mut grid: Vec<f64> = (0..=n).map(|i| t_lo + (t_hi - t_lo) * i as f64 / n as f64).collect();
        grid[n] = t_hi;
        grid.extend([t1, t2]);
        grid.sort_by(f64::total_cmp);
        grid.dedup();

        let price_below_t1 = instance.value(instance.q_hi(), t1);
        let mut mech = Self {
            instance,
            rule,
            t1,
            t2,
            grid,
            lambda: Vec::new(),
            r_b: Vec::new(),
            cumulative: Vec::new(),
            pay: Vec::new(),
            price_below_t1,
        };

        mech.lambda = mech.grid.par_iter().map(|&t| mech.lambda_at(t)).collect();
        mech.r_b = mech.grid.par_iter().map(|&t| mech.r_b_at(t)).collect();
        let span = t_hi - t_lo;
        let cells: Vec<f64> = mech
            .grid
            .par_windows(2)
            .map(|w| {
                if w[0] < mech.t1 {
                    0.0
                } else {
                    Integrator::new(1e-10 * (w[1] - w[0]) / span)
                        .integrate(|x| mech.r_b_at(x), w[0], w[1])
                        .value
                }
            })
            .collect();
        let mut cumulative = Vec::with_capacity(mech.grid.len());
        let mut running = 0.0;
        cumulative.push(0.0);
        for c in cells {
            running += c;
            cumulative.push(running);
        }
        mech.cumulative = cumulative;
        mech.pay = mech.grid.par_iter().map(|&t| mech.pay_at(t)).collect();
        Ok(mech)
    }

    fn lambda_at(&self, t: f64) -> f64 {
        match &self.rule {
            Rule::Optimal => threshold(&self.instance, t),
            Rule::Custom(f) => f(t).clamp(self.instance.q_lo(), self.instance.q_hi()),
        }
    }

    fn r_b_at(&self, t: f64) -> f64 {
        self.instance.expected_slope_above(self.lambda_at(t), t)
    }

    /// `int_{t1}^{t} R_b`
    fn cumulative_at(&self, t: f64) -> f64 {
        if t <= self.t1 {
            return 0.0;
        }
        let i = (self.grid.partition_point(|&g| g <= t) - 1).min(self.grid.len() - 2);
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let span = self.instance.t_hi() - self.instance.t_lo();
        let partial = Integrator::new(1e-10 * (b - a) / span)
            .integrate(|x| self.r_b_at(x), a, t.min(b))
            .value;
        self.cumulative[i] + partial
    }

    fn pay_at(&self, t: f64) -> f64 {
        if t <= self.t1 {
            return self.price_below_t1;
        }
        let lam = self.lambda_at(t);
        let s = self.instance.q_dist.sf(lam);
        if s <= SURVIVAL_FLOOR {
            return self.price_below_t1;
        }
        (self.instance.expected_value_above(lam, t) - self.cumulative_at(t)) / s
    }

    fn clamp_t(&self, t: f64) -> f64 {
        t.clamp(self.instance.t_lo(), self.instance.t_hi())
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self.rule, Rule::Optimal)
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }

    pub fn lambda(&self, t: f64) -> f64 {
        self.lambda_at(self.clamp_t(t))
    }

    pub fn r_b(&self, t: f64) -> f64 {
        self.r_b_at(self.clamp_t(t))
    }

    /// `int_{t_lo}^{t} R_b`, which equals `U_b(t)` by the envelope formula.
    pub fn integrated_r_b(&self, t: f64) -> f64 {
        self.cumulative_at(self.clamp_t(t))
    }

    pub fn buyer_pay(&self, t: f64) -> f64 {
        self.pay_at(self.clamp_t(t))
    }

    pub fn seller_pay(&self) -> f64 {
        self.instance.reserve
    }

    /// Grid including `t1` and `t2` as nodes.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn lambda_samples(&self) -> &[f64] {
        &self.lambda
    }

    pub fn r_b_samples(&self) -> &[f64] {
        &self.r_b
    }

    pub fn pay_samples(&self) -> &[f64] {
        &self.pay
    }

    /// `U_b` on the grid via the envelope formula.
    pub fn utility_samples(&self) -> &[f64] {
        &self.cumulative
    }
}

impl Mechanism for ThresholdMechanism {
    fn threshold(&self, t: f64) -> f64 {
        self.lambda(t)
    }

    fn pay_buyer(&self, t: f64) -> f64 {
        self.buyer_pay(t)
    }

    fn pay_seller(&self, _q: f64) -> f64 {
        self.instance.reserve
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.t1, self.t2]
    }
}

fn clamped_threshold<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, t: f64) -> f64 {
    mech.threshold(t).clamp(inst.q_lo(), inst.q_hi())
}

/// `R_b(t) = int v_t(q, t) pi(q, t) g(q) dq`
pub fn r_b<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, t: f64) -> f64 {
    inst.expected_slope_above(clamped_threshold(inst, mech, t), t)
}

pub fn pay_buyer<M: Mechanism + ?Sized>(mech: &M, t: f64) -> f64 {
    mech.pay_buyer(t)
}

/// `U_b(t) = int pi(q, t) [v(q, t) - P_b(t)] g(q) dq`
pub fn buyer_utility<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, t: f64) -> f64 {
    misreport_utility(inst, mech, t, t)
}

/// Utility of a type-`t` buyer who reports `t_report` and obeys the signal.
pub fn misreport_utility<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, t: f64, t_report: f64) -> f64 {
    let lam = clamped_threshold(inst, mech, t_report);
    let s = inst.q_dist.sf(lam);
    if s == 0.0 {
        return 0.0;
    }
    inst.expected_value_above(lam, t) - mech.pay_buyer(t_report) * s
}

/// Probability over buyer types that quality `q` trades. Assumes a
/// non-increasing threshold.
pub fn trade_probability_at_quality<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, q: f64) -> f64 {
    let trades = |t: f64| q > mech.threshold(t);
    let tau = boundary(trades, inst.t_lo(), inst.t_hi());
    if tau >= inst.t_hi() && !trades(inst.t_hi()) {
        return 0.0;
    }
    inst.t_dist.sf(tau)
}

/// `SU_s(q) = [P_s(q) - r] Pr_t[pi(q, t) = 1]`
pub fn seller_surplus<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, q: f64) -> f64 {
    let margin = mech.pay_seller(q) - inst.reserve;
    if margin == 0.0 {
        return 0.0;
    }
    margin * trade_probability_at_quality(inst, mech, q)
}

fn outer_breaks<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M) -> Vec<f64> {
    let mut b = mech.breakpoints();
    b.extend_from_slice(inst.t_dist.knots());
    b
}

/// Mediator revenue `int int pi [P_b(t) - P_s(q)] g f` by iterated quadrature.
pub fn revenue<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M) -> f64 {
    let inner = Integrator::default();
    let q_knots = inst.q_dist.knots();
    let outer = |t: f64| {
        let lam = clamped_threshold(inst, mech, t);
        if lam >= inst.q_hi() {
            return 0.0;
        }
        let p = mech.pay_buyer(t);
        let mass = inner
            .integrate_with_breaks(
                |q| (p - mech.pay_seller(q)) * inst.q_dist.density(q),
                lam,
                inst.q_hi(),
                q_knots,
            )
            .value;
        inst.t_dist.density(t) * mass
    };
    Integrator::new(OUTER_TOLERANCE)
        .integrate_with_breaks(outer, inst.t_lo(), inst.t_hi(), &outer_breaks(inst, mech))
        .value
}

/// Revenue through the virtual-surplus form `-U_b(t_lo) + int int eta pi g f`.
/// Agrees with [`revenue`] for mechanisms with envelope payments and `P_s = r`.
pub fn revenue_rewritten<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M) -> f64 {
    let inner = Integrator::default();
    let q_knots = inst.q_dist.knots();
    let outer = |t: f64| {
        let lam = clamped_threshold(inst, mech, t);
        if lam >= inst.q_hi() {
            return 0.0;
        }
        let e = eta_slice(inst, t);
        let mass = inner
            .integrate_with_breaks(|q| e(q) * inst.q_dist.density(q), lam, inst.q_hi(), q_knots)
            .value;
        inst.t_dist.density(t) * mass
    };
    let total = Integrator::new(OUTER_TOLERANCE)
        .integrate_with_breaks(outer, inst.t_lo(), inst.t_hi(), &outer_breaks(inst, mech))
        .value;
    total - buyer_utility(inst, mech, inst.t_lo())
}

/// `int (1 - G(lambda(t))) f(t) dt`
pub fn trade_probability<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M) -> f64 {
    Integrator::new(OUTER_TOLERANCE)
        .integrate_with_breaks(
            |t| inst.t_dist.density(t) * inst.q_dist.sf(clamped_threshold(inst, mech, t)),
            inst.t_lo(),
            inst.t_hi(),
            &outer_breaks(inst, mech),
        )
        .value
}
