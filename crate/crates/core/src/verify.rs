//! Grid certification of the original constraints: participation, obedience
//! under both signals, truthfulness with the signal-0 deviation, and the seller
//! side. Structural monotonicity claims are checked separately.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mechanism::Mechanism;
use crate::model::ProblemInstance;
use crate::solver::{buyer_utility, r_b, seller_surplus};

pub const DEFAULT_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_GRID: usize = 201;
/// Slopes of `P_b` on `(t1, t2)` must lie below this.
pub const STRICT_SLOPE: f64 = -1e-9;

pub const IR_BUYER: &str = "ir_buyer";
pub const IR_SELLER: &str = "ir_seller";
pub const OBEDIENCE_BUY: &str = "obedience_signal_1";
pub const OBEDIENCE_NOT_BUY: &str = "obedience_signal_0";
pub const OBEDIENCE_SELLER: &str = "obedience_seller";
pub const TRUTH_MISREPORT: &str = "truthfulness_misreport";
pub const TRUTH_PRIOR: &str = "truthfulness_prior_deviation";
pub const TRUTH_FULL: &str = "truthfulness_full";
pub const TRUTH_SELLER: &str = "truthfulness_seller";

pub const LAMBDA_MONOTONE: &str = "lambda_non_increasing";
pub const POSTERIOR_WIDTH: &str = "posterior_width_non_decreasing";
pub const R_B_MONOTONE: &str = "r_b_non_decreasing";
pub const PAY_MONOTONE: &str = "pay_buyer_non_increasing";
pub const PAY_STRICT: &str = "pay_buyer_strictly_decreasing";
pub const SELLER_ZERO: &str = "seller_surplus_zero";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    None,
    Type { t: f64 },
    Pair { t: f64, t_report: f64 },
    Quality { q: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub name: String,
    /// Largest signed violation; non-positive means satisfied everywhere.
    pub worst_violation: f64,
    pub location: Location,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grids {
    pub t_points: usize,
    pub q_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub constraint_results: Vec<ConstraintResult>,
    pub grids: Grids,
    pub feasible: bool,
    pub tolerance: f64,
}

impl VerificationReport {
    pub fn result(&self, name: &str) -> Option<&ConstraintResult> {
        self.constraint_results.iter().find(|c| c.name == name)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ConstraintResult> {
        self.constraint_results.iter().filter(|c| !c.passed)
    }

    pub fn worst_violation(&self) -> f64 {
        self.constraint_results
            .iter()
            .map(|c| c.worst_violation)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<32} {:>14} {:>6}  location\n", "constraint", "worst", "ok");
        for c in &self.constraint_results {
            out.push_str(&format!(
                "{:<32} {:>14.6e} {:>6}  {}\n",
                c.name,
                c.worst_violation,
                if c.passed { "yes" } else { "NO" },
                describe(&c.location)
            ));
        }
        out.push_str(&format!(
            "feasible: {} (tolerance {:e}, grid {}x{})\n",
            self.feasible, self.tolerance, self.grids.t_points, self.grids.q_points
        ));
        out
    }
}

fn describe(loc: &Location) -> String {
    match loc {
        Location::None => "-".into(),
        Location::Type { t } => format!("t={t:.6}"),
        Location::Pair { t, t_report } => format!("t={t:.6} t'={t_report:.6}"),
        Location::Quality { q } => format!("q={q:.6}"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verifier {
    pub t_points: usize,
    pub q_points: usize,
    pub tolerance: f64,
}

impl Default for Verifier {
    fn default() -> Self {
        Self {
            t_points: DEFAULT_GRID,
            q_points: DEFAULT_GRID,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

/// Running maximum with a total tie-break on location, so the result does not
/// depend on evaluation order.
#[derive(Debug, Clone, Copy)]
struct Worst {
    value: f64,
    key: (f64, f64),
    location: Location,
}

impl Worst {
    fn empty() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            key: (f64::INFINITY, f64::INFINITY),
            location: Location::None,
        }
    }

    fn at(value: f64, key: (f64, f64), location: Location) -> Self {
        // NaN must never look satisfied.
        let value = if value.is_nan() { f64::INFINITY } else { value };
        Self { value, key, location }
    }

    fn max(self, other: Self) -> Self {
        match self.value.total_cmp(&other.value) {
            std::cmp::Ordering::Greater => self,
            std::cmp::Ordering::Less => other,
            std::cmp::Ordering::Equal => {
                if (other.key.0, other.key.1) < (self.key.0, self.key.1) {
                    other
                } else {
                    self
                }
            }
        }
    }

    fn result(self, name: &str, tolerance: f64) -> ConstraintResult {
        let value = if self.value == f64::NEG_INFINITY {
            0.0
        } else {
            self.value
        };
        ConstraintResult {
            name: name.to_string(),
            worst_violation: value,
            location: self.location,
            passed: value <= tolerance,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let mut v: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    v[n - 1] = hi;
    v
}

/// Per-report quantities shared by every true type.
struct ReportRow {
    t: f64,
    lambda: f64,
    pay: f64,
    /// `G(lambda)`
    below: f64,
    /// `1 - G(lambda)`
    above: f64,
}

/// Per-type quantities.
struct TypeRow {
    t: f64,
    utility: f64,
    prior_value: f64,
}

impl Verifier {
    pub fn new(t_points: usize, q_points: usize, tolerance: f64) -> Self {
        Self {
            t_points,
            q_points,
            tolerance,
        }
    }

    pub fn t_grid(&self, inst: &ProblemInstance) -> Vec<f64> {
        linspace(inst.t_lo(), inst.t_hi(), self.t_points.max(1))
    }

    pub fn q_grid(&self, inst: &ProblemInstance) -> Vec<f64> {
        linspace(inst.q_lo(), inst.q_hi(), self.q_points.max(1))
    }

    /// Checks every constraint of the original program.
    pub fn verify<M: Mechanism + ?Sized>(&self, inst: &ProblemInstance, mech: &M) -> VerificationReport {
        self.verify_on(inst, mech, &self.t_grid(inst), &self.q_grid(inst))
    }

    /// As [`Verifier::verify`] on explicit grids.
    pub fn verify_on<M: Mechanism + ?Sized>(
        &self,
        inst: &ProblemInstance,
        mech: &M,
        t_grid: &[f64],
        q_grid: &[f64],
    ) -> VerificationReport {
        let tol = self.tolerance;
        let reports: Vec<ReportRow> = t_grid
            .par_iter()
            .map(|&t| {
                let lambda = mech.threshold(t).clamp(inst.q_lo(), inst.q_hi());
                ReportRow {
                    t,
                    lambda,
                    pay: mech.pay_buyer(t),
                    below: inst.q_dist.cdf(lambda),
                    above: inst.q_dist.sf(lambda),
                }
            })
            .collect();
        let types: Vec<TypeRow> = t_grid
            .par_iter()
            .map(|&t| TypeRow {
                t,
                utility: buyer_utility(inst, mech, t),
                prior_value: inst.expected_value_above(inst.q_lo(), t),
            })
            .collect();

        let mut results = Vec::new();

        // Participation and obedience, per type.
        let mut ir = Worst::empty();
        let mut not_buy = Worst::empty();
        for (row, rep) in types.iter().zip(&reports) {
            let loc = Location::Type { t: row.t };
            ir = ir.max(Worst::at(-row.utility, (row.t, 0.0), loc));
            // Buying after signal 0 adds int_{q < lambda} (v - P_b) g.
            let deviation = row.prior_value - rep.pay - row.utility;
            not_buy = not_buy.max(Worst::at(deviation, (row.t, 0.0), loc));
        }
        results.push(ir.result(IR_BUYER, tol));

        let surpluses: Vec<f64> = q_grid.par_iter().map(|&q| seller_surplus(inst, mech, q)).collect();
        let mut ir_s = Worst::empty();
        let mut obey_s = Worst::empty();
        for (&q, &su) in q_grid.iter().zip(&surpluses) {
            let loc = Location::Quality { q };
            ir_s = ir_s.max(Worst::at(-su, (q, 0.0), loc));
            obey_s = obey_s.max(Worst::at((mech.pay_seller(q) - inst.reserve).abs(), (q, 0.0), loc));
        }
        results.push(ir_s.result(IR_SELLER, tol));
        results.push(ir.result(OBEDIENCE_BUY, tol));
        results.push(not_buy.result(OBEDIENCE_NOT_BUY, tol));
        results.push(obey_s.result(OBEDIENCE_SELLER, tol));

        // Truthfulness over every (t, t') pair.
        let (misreport, prior, full) = types
            .par_iter()
            .map(|row| {
                let mut m = Worst::empty();
                let mut p = Worst::empty();
                let mut f = Worst::empty();
                for rep in &reports {
                    let key = (row.t, rep.t);
                    let loc = Location::Pair {
                        t: row.t,
                        t_report: rep.t,
                    };
                    let upper = if rep.above == 0.0 {
                        0.0
                    } else {
                        inst.expected_value_above(rep.lambda, row.t)
                    };
                    let obey = upper - rep.pay * rep.above;
                    let buy_on_zero = (row.prior_value - upper) - rep.pay * rep.below;
                    let always_buy = row.prior_value - rep.pay;
                    let best = obey.max(0.0) + buy_on_zero.max(0.0);
                    m = m.max(Worst::at(obey - row.utility, key, loc));
                    p = p.max(Worst::at(always_buy - row.utility, key, loc));
                    f = f.max(Worst::at(best - row.utility, key, loc));
                }
                (m, p, f)
            })
            .reduce(
                || (Worst::empty(), Worst::empty(), Worst::empty()),
                |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)),
            );
        results.push(misreport.result(TRUTH_MISREPORT, tol));
        results.push(prior.result(TRUTH_PRIOR, tol));
        results.push(full.result(TRUTH_FULL, tol));

        let (lo, hi) =
            surpluses
                .iter()
                .zip(q_grid)
                .fold((None::<(f64, f64)>, None::<(f64, f64)>), |(lo, hi), (&s, &q)| {
                    let lo = match lo {
                        Some((v, _)) if v <= s => lo,
                        _ => Some((s, q)),
                    };
                    let hi = match hi {
                        Some((v, _)) if v >= s => hi,
                        _ => Some((s, q)),
                    };
                    (lo, hi)
                });
        let seller_truth = match (lo, hi) {
            (Some((a, _)), Some((b, qb))) => Worst::at(b - a, (qb, 0.0), Location::Quality { q: qb }),
            _ => Worst::empty(),
        };
        results.push(seller_truth.result(TRUTH_SELLER, tol));

        let feasible = results.iter().all(|c| c.passed);
        VerificationReport {
            constraint_results: results,
            grids: Grids {
                t_points: t_grid.len(),
                q_points: q_grid.len(),
            },
            feasible,
            tolerance: tol,
        }
    }

    /// Monotonicity of `lambda`, `R_b`, `P_b`, strict decrease of `P_b` on
    /// `(t1, t2)` and exact zero seller surplus.
    pub fn check_structure<M: Mechanism + ?Sized>(
        &self,
        inst: &ProblemInstance,
        mech: &M,
        t1: f64,
        t2: f64,
    ) -> StructureReport {
        let tol = self.tolerance;
        let ts = self.t_grid(inst);
        let lambda: Vec<f64> = ts.iter().map(|&t| mech.threshold(t)).collect();
        let rb: Vec<f64> = ts.par_iter().map(|&t| r_b(inst, mech, t)).collect();
        let pay: Vec<f64> = ts.par_iter().map(|&t| mech.pay_buyer(t)).collect();

        let rise = |ys: &[f64], sign: f64| {
            let mut w = Worst::empty();
            for i in 1..ys.len() {
                let loc = Location::Type { t: ts[i] };
                w = w.max(Worst::at(sign * (ys[i] - ys[i - 1]), (ts[i], 0.0), loc));
            }
            w
        };
        let mut checks = vec![
            rise(&lambda, 1.0).result(LAMBDA_MONOTONE, tol),
            rise(&lambda.iter().map(|l| inst.q_hi() - l).collect::<Vec<_>>(), -1.0).result(POSTERIOR_WIDTH, tol),
            rise(&rb, -1.0).result(R_B_MONOTONE, tol),
            rise(&pay, 1.0).result(PAY_MONOTONE, tol),
        ];

        // Finite-difference slopes between grid points strictly inside (t1, t2).
        let inside: Vec<usize> = (0..ts.len()).filter(|&i| ts[i] > t1 && ts[i] < t2).collect();
        let mut steepest_flat = Worst::empty();
        for w in inside.windows(2) {
            let (i, j) = (w[0], w[1]);
            let slope = (pay[j] - pay[i]) / (ts[j] - ts[i]);
            steepest_flat = steepest_flat.max(Worst::at(slope, (ts[i], 0.0), Location::Type { t: ts[i] }));
        }
        let strict = if inside.len() < 2 {
            ConstraintResult {
                name: PAY_STRICT.into(),
                worst_violation: 0.0,
                location: Location::None,
                passed: true,
            }
        } else {
            ConstraintResult {
                name: PAY_STRICT.into(),
                worst_violation: steepest_flat.value - STRICT_SLOPE,
                location: steepest_flat.location,
                passed: steepest_flat.value < STRICT_SLOPE,
            }
        };
        let max_slope = (inside.len() >= 2).then_some(steepest_flat.value);
        checks.push(strict);

        let q_grid = self.q_grid(inst);
        let mut nonzero = Worst::empty();
        for &q in &q_grid {
            let s = seller_surplus(inst, mech, q);
            nonzero = nonzero.max(Worst::at(s.abs(), (q, 0.0), Location::Quality { q }));
        }
        let mut zero = nonzero.result(SELLER_ZERO, tol);
        zero.passed = zero.worst_violation == 0.0;
        checks.push(zero);

        StructureReport {
            passed: checks.iter().all(|c| c.passed),
            checks,
            max_pay_slope_between_cutoffs: max_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub checks: Vec<ConstraintResult>,
    pub passed: bool,
    /// Least negative finite-difference slope of `P_b` on `(t1, t2)`.
    pub max_pay_slope_between_cutoffs: Option<f64>,
}

impl StructureReport {
    pub fn check(&self, name: &str) -> Option<&ConstraintResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub fn verify<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M) -> VerificationReport {
    Verifier::default().verify(inst, mech)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Distribution;
    use crate::mechanism::{Adjusted, FnMechanism};
    use crate::model::{Alpha, Valuation};
    use crate::solver::solve;

    fn uniform() -> ProblemInstance {
        ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::linear(Alpha::Power {
                coef: 1.0,
                exponent: 1.0,
            }),
            0.5,
        )
    }

    #[test]
    fn optimal_uniform_mechanism_is_feasible() {
        let inst = uniform();
        let m = solve(&inst).unwrap();
        let report = Verifier::new(61, 61, DEFAULT_TOLERANCE).verify(&inst, &m);
        assert!(report.feasible, "{}", report.to_table());
        assert_eq!(report.result(IR_SELLER).unwrap().worst_violation, 0.0);
        assert_eq!(report.result(OBEDIENCE_SELLER).unwrap().worst_violation, 0.0);
    }

    #[test]
    fn inflated_payment_breaks_ir() {
        let inst = uniform();
        let m = solve(&inst).unwrap();
        let bad = Adjusted::new(&m, 1.0, 2.0).shift_buyer_payment(10.0);
        let report = Verifier::new(31, 31, DEFAULT_TOLERANCE).verify(&inst, &bad);
        let ir = report.result(IR_BUYER).unwrap();
        assert!(!ir.passed);
        assert!(buyer_utility(&inst, &bad, 1.0) < 0.0);
        // U_b drops by 10 (1 - G(lambda)), so the worst point is the first type that always trades
        assert!(ir.worst_violation > 9.0);
        assert!(!report.feasible);
    }

    #[test]
    fn seller_overpayment_shows_in_obedience() {
        let inst = uniform();
        let m = solve(&inst).unwrap();
        let bad = Adjusted::new(&m, 1.0, 2.0).shift_seller_payment(0.01);
        let report = Verifier::new(11, 11, DEFAULT_TOLERANCE).verify(&inst, &bad);
        let c = report.result(OBEDIENCE_SELLER).unwrap();
        assert!((c.worst_violation - 0.01).abs() < 1e-15);
        assert!(!c.passed);
    }

    #[test]
    fn increasing_payment_fails_structure() {
        let inst = uniform();
        let m = FnMechanism::new(|t| if t < 0.5 { 2.0 } else { 1.0 }, |t| 1.0 + t, |_| 0.5);
        let s = Verifier::new(21, 21, DEFAULT_TOLERANCE).check_structure(&inst, &m, 0.5, 0.5);
        assert!(!s.check(PAY_MONOTONE).unwrap().passed);
        assert!(s.check(LAMBDA_MONOTONE).unwrap().passed);
    }

    #[test]
    fn worst_tie_breaks_on_location() {
        let a = Worst::at(1.0, (0.5, 0.0), Location::Type { t: 0.5 });
        let b = Worst::at(1.0, (0.2, 0.0), Location::Type { t: 0.2 });
        assert_eq!(a.max(b).key, (0.2, 0.0));
        assert_eq!(b.max(a).key, (0.2, 0.0));
        assert_eq!(Worst::at(f64::NAN, (0.0, 0.0), Location::None).value, f64::INFINITY);
    }
}
