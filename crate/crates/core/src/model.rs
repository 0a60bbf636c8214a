//! Problem instances: type distributions, the buyer's valuation and the
//! seller's reserve price, plus the validation that gates the solver.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Distribution, MhrReport};
use crate::quad::Integrator;

/// Grid size used for the hazard-rate check during validation.
pub const MHR_GRID: usize = 1024;
/// Side of the (q, t) grid used for valuation shape checks.
pub const SHAPE_GRID: usize = 64;
/// Tolerance for sign conditions on the shape grid.
pub const SHAPE_TOLERANCE: f64 = 1e-9;

const FIRST_STEP: f64 = 1e-5;
const SECOND_STEP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error("malformed instance: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid valuation: {0}")]
    Valuation(String),
}

/// Quality weight `alpha(q)` in the linear valuation `v(q, t) = alpha(q) t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Alpha {
    /// `coef * q^exponent`
    Power { coef: f64, exponent: f64 },
    /// `intercept + slope * q`
    Affine { intercept: f64, slope: f64 },
    /// `scale * exp(rate * q)`
    Exponential { scale: f64, rate: f64 },
    /// Monotone cubic (Fritsch-Carlson) through the knots.
    Spline(MonotoneSpline),
}

impl Alpha {
    pub fn value(&self, q: f64) -> f64 {
        match self {
            Alpha::Power { coef, exponent } => coef * q.powf(*exponent),
            Alpha::Affine { intercept, slope } => intercept + slope * q,
            Alpha::Exponential { scale, rate } => scale * (rate * q).exp(),
            Alpha::Spline(s) => s.value(q),
        }
    }

    pub fn derivative(&self, q: f64) -> f64 {
        match self {
            Alpha::Power { coef, exponent } => coef * exponent * q.powf(exponent - 1.0),
            Alpha::Affine { slope, .. } => *slope,
            Alpha::Exponential { scale, rate } => scale * rate * (rate * q).exp(),
            Alpha::Spline(s) => s.derivative(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineKnots {
    knots: Vec<[f64; 2]>,
}

/// Shape-preserving piecewise cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineKnots", into = "SplineKnots")]
pub struct MonotoneSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl From<MonotoneSpline> for SplineKnots {
    fn from(s: MonotoneSpline) -> Self {
        SplineKnots {
            knots: s.xs.iter().zip(&s.ys).map(|(&x, &y)| [x, y]).collect(),
        }
    }
}

impl TryFrom<SplineKnots> for MonotoneSpline {
    type Error = ModelError;

    fn try_from(k: SplineKnots) -> Result<Self, Self::Error> {
        MonotoneSpline::new(k.knots)
    }
}

impl MonotoneSpline {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if knots.len() < 2 {
            return Err(ModelError::Valuation("spline needs at least two knots".into()));
        }
        let xs: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let ys: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) || xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Valuation(
                "spline knots must be finite with strictly increasing abscissae".into(),
            ));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            slopes[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { xs, ys, slopes })
    }

    fn locate(&self, x: f64) -> usize {
        self.xs.partition_point(|&k| k <= x).clamp(1, self.xs.len() - 1) - 1
    }

    pub fn value(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let (h00, h10) = (2.0 * s.powi(3) - 3.0 * s * s + 1.0, s.powi(3) - 2.0 * s * s + s);
        let (h01, h11) = (-2.0 * s.powi(3) + 3.0 * s * s, s.powi(3) - s * s);
        h00 * self.ys[i] + h10 * h * self.slopes[i] + h01 * self.ys[i + 1] + h11 * h * self.slopes[i + 1]
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.locate(x);
        let h = self.xs[i + 1] - self.xs[i];
        let s = (x - self.xs[i]) / h;
        let d00 = (6.0 * s * s - 6.0 * s) / h;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = (-6.0 * s * s + 6.0 * s) / h;
        let d11 = 3.0 * s * s - 2.0 * s;
        d00 * self.ys[i] + d10 * self.slopes[i] + d01 * self.ys[i + 1] + d11 * self.slopes[i + 1]
    }

    pub fn knot_slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }
}

/// Three-point end slope with the usual shape-preserving clamps.
fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// `coef * q^q_pow * t^t_pow`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub q_pow: u32,
    pub t_pow: u32,
}

impl Monomial {
    fn eval(&self, q: f64, t: f64, dq: u32, dt: u32) -> f64 {
        if dq > self.q_pow || dt > self.t_pow {
            return 0.0;
        }
        let falling = |n: u32, k: u32| (0..k).map(|i| (n - i) as f64).product::<f64>();
        self.coef
            * falling(self.q_pow, dq)
            * falling(self.t_pow, dt)
            * q.powi((self.q_pow - dq) as i32)
            * t.powi((self.t_pow - dt) as i32)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivatives {
    #[default]
    Analytic,
    FiniteDifference,
}

type Surface = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A valuation supplied as closures. Missing derivatives fall back to
/// central finite differences.
#[derive(Clone)]
pub struct CustomValuation {
    pub value: Surface,
    pub d_q: Option<Surface>,
    pub d_t: Option<Surface>,
    pub d_tt: Option<Surface>,
    pub d_qt: Option<Surface>,
}

impl CustomValuation {
    pub fn new(value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            d_q: None,
            d_t: None,
            d_tt: None,
            d_qt: None,
        }
    }
}

impl fmt::Debug for CustomValuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomValuation")
            .field("d_q", &self.d_q.is_some())
            .field("d_t", &self.d_t.is_some())
            .field("d_tt", &self.d_tt.is_some())
            .field("d_qt", &self.d_qt.is_some())
            .finish()
    }
}

/// Buyer valuation `v(q, t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Valuation {
    /// `v(q, t) = alpha(q) t`
    Linear { alpha: Alpha },
    /// Sum of monomials in q and t.
    Polynomial {
        terms: Vec<Monomial>,
        #[serde(default)]
        derivatives: Derivatives,
    },
    #[serde(skip)]
    Custom(CustomValuation),
}

impl PartialEq for Valuation {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Valuation::Linear { alpha: a }, Valuation::Linear { alpha: b }) => a == b,
            (
                Valuation::Polynomial {
                    terms: a,
                    derivatives: da,
                },
                Valuation::Polynomial {
                    terms: b,
                    derivatives: db,
                },
            ) => a == b && da == db,
            (Valuation::Custom(a), Valuation::Custom(b)) => Arc::ptr_eq(&a.value, &b.value),
            _ => false,
        }
    }
}

impl Valuation {
    pub fn linear(alpha: Alpha) -> Self {
        Valuation::Linear { alpha }
    }

    pub fn polynomial(terms: &[(f64, u32, u32)]) -> Self {
        Valuation::Polynomial {
            terms: terms
                .iter()
                .map(|&(coef, q_pow, t_pow)| Monomial { coef, q_pow, t_pow })
                .collect(),
            derivatives: Derivatives::Analytic,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Valuation::Linear { .. })
    }

    fn raw(&self, q: f64, t: f64) -> f64 {
        match self {
            Valuation::Linear { alpha } => alpha.value(q) * t,
            Valuation::Polynomial { terms, .. } => terms.iter().map(|m| m.eval(q, t, 0, 0)).sum(),
            Valuation::Custom(c) => (c.value)(q, t),
        }
    }
}

/// One bilateral-trade mediation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub q_dist: Distribution,
    pub t_dist: Distribution,
    pub valuation: Valuation,
    pub reserve: f64,
}

impl ProblemInstance {
    pub fn new(q_dist: Distribution, t_dist: Distribution, valuation: Valuation, reserve: f64) -> Self {
        Self {
            q_dist,
            t_dist,
            valuation,
            reserve,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let inst: ProblemInstance = serde_json::from_str(text)?;
        if !inst.reserve.is_finite() {
            return Err(ModelError::Valuation("reserve must be finite".into()));
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn q_lo(&self) -> f64 {
        self.q_dist.lo()
    }

    pub fn q_hi(&self) -> f64 {
        self.q_dist.hi()
    }

    pub fn t_lo(&self) -> f64 {
        self.t_dist.lo()
    }

    pub fn t_hi(&self) -> f64 {
        self.t_dist.hi()
    }

    fn steps(&self, scale: f64) -> (f64, f64) {
        (scale * self.q_dist.width(), scale * self.t_dist.width())
    }

    fn analytic(&self) -> bool {
        matches!(
            self.valuation,
            Valuation::Polynomial {
                derivatives: Derivatives::Analytic,
                ..
            }
        )
    }

    pub fn value(&self, q: f64, t: f64) -> f64 {
        self.valuation.raw(q, t)
    }

    /// `dv/dt`
    pub fn value_t(&self, q: f64, t: f64) -> f64 {
        match &self.valuation {
            Valuation::Linear { alpha } => alpha.value(q),
            Valuation::Polynomial { terms, .. } if self.analytic() => terms.iter().map(|m| m.eval(q, t, 0, 1)).sum(),
            Valuation::Custom(CustomValuation { d_t: Some(d), .. }) => d(q, t),
            _ => {
                let (_, k) = self.steps(FIRST_STEP);
                (self.value(q, t + k) - self.value(q, t - k)) / (2.0 * k)
            }
        }
    }

    /// `dv/dq`
    pub fn value_q(&self, q: f64, t: f64) -> f64 {
        match &self.valuation {
            Valuation::Linear { alpha } => alpha.derivative(q) * t,
            Valuation::Polynomial { terms, .. } if self.analytic() => terms.iter().map(|m| m.eval(q, t, 1, 0)).sum(),
            Valuation::Custom(CustomValuation { d_q: Some(d), .. }) => d(q, t),
            _ => {
                let (h, _) = self.steps(FIRST_STEP);
                (self.value(q + h, t) - self.value(q - h, t)) / (2.0 * h)
            }
        }
    }

    /// `d2v/dt2`
    pub fn value_tt(&self, q: f64, t: f64) -> f64 {
        match &self.valuation {
            Valuation::Linear { .. } => 0.0,
            Valuation::Polynomial { terms, .. } if self.analytic() => terms.iter().map(|m| m.eval(q, t, 0, 2)).sum(),
            Valuation::Custom(CustomValuation { d_tt: Some(d), .. }) => d(q, t),
            _ => {
                let (_, k) = self.steps(SECOND_STEP);
                (self.value(q, t + k) - 2.0 * self.value(q, t) + self.value(q, t - k)) / (k * k)
            }
        }
    }

    /// `d2v/dq dt`
    pub fn value_qt(&self, q: f64, t: f64) -> f64 {
        match &self.valuation {
            Valuation::Linear { alpha } => alpha.derivative(q),
            Valuation::Polynomial { terms, .. } if self.analytic() => terms.iter().map(|m| m.eval(q, t, 1, 1)).sum(),
            Valuation::Custom(CustomValuation { d_qt: Some(d), .. }) => d(q, t),
            _ => {
                let (h, k) = self.steps(SECOND_STEP);
                (self.value(q + h, t + k) - self.value(q + h, t - k) - self.value(q - h, t + k)
                    + self.value(q - h, t - k))
                    / (4.0 * h * k)
            }
        }
    }

    /// Buyer's expected valuation under the prior on quality, `E_q[v(q, t)]`.
    pub fn prior_value(&self, t: f64) -> Result<f64, DistError> {
        if !self.t_dist.contains(t) {
            return Err(DistError::OutOfSupport {
                x: t,
                lo: self.t_lo(),
                hi: self.t_hi(),
            });
        }
        Ok(self.expected_value_above(self.q_lo(), t))
    }

    /// `int_{from}^{q_hi} v(q, t) g(q) dq`
    pub(crate) fn expected_value_above(&self, from: f64, t: f64) -> f64 {
        Integrator::default()
            .integrate_with_breaks(
                |q| self.value(q, t) * self.q_dist.density(q),
                from,
                self.q_hi(),
                self.q_dist.knots(),
            )
            .value
    }

    /// `int_{from}^{q_hi} v_t(q, t) g(q) dq`
    pub(crate) fn expected_slope_above(&self, from: f64, t: f64) -> f64 {
        if from >= self.q_hi() {
            return 0.0;
        }
        Integrator::default()
            .integrate_with_breaks(
                |q| self.value_t(q, t) * self.q_dist.density(q),
                from,
                self.q_hi(),
                self.q_dist.knots(),
            )
            .value
    }

    /// Runs every instance check. Pure: identical instances give identical reports.
    pub fn validate(&self) -> ValidationReport {
        let mut checks = Vec::new();

        let low = self.value(self.q_lo(), self.t_lo());
        let high = self.value(self.q_hi(), self.t_hi());
        let r = self.reserve;
        checks.push(Check::new(
            CHECK_RANGE,
            r.is_finite() && low < r && r < high,
            format!("need v(q_lo, t_lo) = {low} < r = {r} < v(q_hi, t_hi) = {high}"),
        ));

        let mhr = self.t_dist.check_mhr(MHR_GRID);
        checks.push(Check::new(
            CHECK_MHR,
            mhr.holds,
            format!(
                "hazard rate of F must be non-decreasing; worst drop {:.3e} near t = {}",
                mhr.worst_violation,
                mhr.location.map_or("-".to_string(), |x| format!("{x:.6}"))
            ),
        ));

        let mut cross_partial_bounds = None;
        match &self.valuation {
            Valuation::Linear { alpha } => {
                let (ok, detail) = self.check_alpha(alpha);
                checks.push(Check::new(CHECK_ALPHA, ok, detail));
            }
            _ => {
                let (a2, a3, bounds, detail2, detail3) = self.check_general();
                cross_partial_bounds = Some(bounds);
                checks.push(Check::new(CHECK_VALUATION_SHAPE, a2, detail2));
                checks.push(Check::new(CHECK_CROSS_PARTIAL, a3, detail3));
            }
        }

        let positive = [&self.q_dist, &self.t_dist]
            .iter()
            .all(|d| (0..SHAPE_GRID).all(|i| d.density(d.lo() + d.width() * i as f64 / SHAPE_GRID as f64) > 0.0));
        checks.push(Check::new(
            CHECK_DENSITIES,
            positive,
            "densities g and f must be positive below the upper endpoint".to_string(),
        ));

        ValidationReport {
            checks,
            mhr,
            cross_partial_bounds,
        }
    }

    fn shape_points(d: &Distribution) -> impl Iterator<Item = f64> + '_ {
        (0..SHAPE_GRID).map(move |i| d.lo() + d.width() * i as f64 / (SHAPE_GRID - 1) as f64)
    }

    fn check_alpha(&self, alpha: &Alpha) -> (bool, String) {
        let mut worst_level = f64::INFINITY;
        let mut worst_slope = f64::INFINITY;
        for q in Self::shape_points(&self.q_dist) {
            worst_level = worst_level.min(alpha.value(q));
            worst_slope = worst_slope.min(alpha.derivative(q));
        }
        if let Alpha::Spline(s) = alpha {
            for &m in s.knot_slopes() {
                worst_slope = worst_slope.min(m);
            }
            let (a, b) = s.domain();
            if a > self.q_lo() || b < self.q_hi() {
                return (false, format!("spline knots [{a}, {b}] do not cover Q"));
            }
        }
        let ok = worst_level > 0.0 && worst_slope > 0.0 && worst_level.is_finite() && worst_slope.is_finite();
        (
            ok,
            format!("need alpha > 0 and alpha' > 0 on Q; min alpha = {worst_level}, min alpha' = {worst_slope}"),
        )
    }

    fn check_general(&self) -> (bool, bool, (f64, f64), String, String) {
        let mut min_vq = f64::INFINITY;
        let mut min_vt = f64::INFINITY;
        let mut max_vtt = f64::NEG_INFINITY;
        let mut lo_qt = f64::INFINITY;
        let mut hi_qt = f64::NEG_INFINITY;
        for q in Self::shape_points(&self.q_dist) {
            for t in Self::shape_points(&self.t_dist) {
                min_vq = min_vq.min(self.value_q(q, t));
                min_vt = min_vt.min(self.value_t(q, t));
                max_vtt = max_vtt.max(self.value_tt(q, t));
                let c = self.value_qt(q, t);
                lo_qt = lo_qt.min(c);
                hi_qt = hi_qt.max(c);
            }
        }
        // Strict positivity would reject v = q t + t at t = 0; allow the grid tolerance.
        let a2 = min_vq > -SHAPE_TOLERANCE && min_vt > -SHAPE_TOLERANCE && max_vtt <= SHAPE_TOLERANCE;
        let a3 = lo_qt.is_finite() && hi_qt.is_finite();
        (
            a2,
            a3,
            (lo_qt, hi_qt),
            format!("need v_q > 0, v_t > 0, v_tt <= 0; min v_q = {min_vq}, min v_t = {min_vt}, max v_tt = {max_vtt}"),
            format!("v_qt must be bounded; observed range [{lo_qt}, {hi_qt}]"),
        )
    }
}

pub const CHECK_RANGE: &str = "non_trivial_range";
pub const CHECK_MHR: &str = "monotone_hazard_rate";
pub const CHECK_ALPHA: &str = "alpha_positive_increasing";
pub const CHECK_VALUATION_SHAPE: &str = "valuation_monotone_concave_in_t";
pub const CHECK_CROSS_PARTIAL: &str = "valuation_cross_partial_bounded";
pub const CHECK_DENSITIES: &str = "positive_densities";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub mhr: MhrReport,
    /// Observed `[min, max]` of `v_qt` on the shape grid (general valuations only).
    pub cross_partial_bounds: Option<(f64, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn uniform_instance(reserve: f64) -> ProblemInstance {
        ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::linear(Alpha::Power {
                coef: 1.0,
                exponent: 1.0,
            }),
            reserve,
        )
    }

    #[test]
    fn uniform_instance_passes() {
        let report = uniform_instance(0.5).validate();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checks.len(), 4);
    }

    #[test]
    fn reserve_above_range_fails() {
        let report = uniform_instance(3.0).validate();
        assert!(!report.passed());
        let failed: Vec<_> = report.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec![CHECK_RANGE]);
    }

    #[test]
    fn general_valuation_with_flat_curvature_passes() {
        let inst = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::polynomial(&[(1.0, 1, 1), (1.0, 0, 1)]),
            0.5,
        );
        let report = inst.validate();
        assert!(report.check(CHECK_VALUATION_SHAPE).unwrap().passed);
        assert!(report.check(CHECK_CROSS_PARTIAL).unwrap().passed);
        assert_eq!(report.cross_partial_bounds, Some((1.0, 1.0)));
    }

    #[test]
    fn convex_in_t_fails_shape_check() {
        let inst = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::polynomial(&[(1.0, 1, 2), (1.0, 0, 1)]),
            0.5,
        );
        assert!(!inst.validate().check(CHECK_VALUATION_SHAPE).unwrap().passed);
    }

    #[test]
    fn prior_value_fixtures() {
        let inst = uniform_instance(0.5);
        assert_relative_eq!(inst.prior_value(0.5).unwrap(), 0.75, max_relative = 1e-14);
        assert_relative_eq!(
            inst.prior_value(0.8).unwrap(),
            inst.value(1.5, 0.8),
            max_relative = 1e-14
        );
        assert!(inst.prior_value(1.5).is_err());

        let sq = ProblemInstance::new(
            Distribution::uniform(0.0, 1.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::linear(Alpha::Power {
                coef: 1.0,
                exponent: 2.0,
            }),
            0.5,
        );
        assert_relative_eq!(sq.prior_value(1.0).unwrap(), 1.0 / 3.0, max_relative = 1e-14);
        // alpha(0) = 0 is not strictly positive
        assert!(!sq.validate().check(CHECK_ALPHA).unwrap().passed);
    }

    #[test]
    fn prior_value_increases_in_t() {
        let inst = uniform_instance(0.5);
        let vals: Vec<f64> = (0..=50).map(|i| inst.prior_value(i as f64 / 50.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn finite_differences_agree_with_analytic() {
        let analytic = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::polynomial(&[(1.0, 2, 1), (0.5, 1, 0), (-0.2, 0, 2)]),
            0.5,
        );
        let mut fd = analytic.clone();
        if let Valuation::Polynomial { derivatives, .. } = &mut fd.valuation {
            *derivatives = Derivatives::FiniteDifference;
        }
        for &(q, t) in &[(1.2, 0.3), (1.7, 0.9), (1.5, 0.5)] {
            assert!((analytic.value_t(q, t) - fd.value_t(q, t)).abs() < 1e-8);
            assert!((analytic.value_q(q, t) - fd.value_q(q, t)).abs() < 1e-8);
            assert!((analytic.value_tt(q, t) - fd.value_tt(q, t)).abs() < 1e-7);
            assert!((analytic.value_qt(q, t) - fd.value_qt(q, t)).abs() < 1e-7);
        }
        assert_eq!(analytic.validate().passed(), fd.validate().passed());
    }

    #[test]
    fn custom_closures_fall_back_to_differences() {
        let inst = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::Custom(CustomValuation::new(|q, t| q * t + t.sqrt())),
            0.5,
        );
        let (q, t) = (1.5, 0.25);
        assert!((inst.value_t(q, t) - (q + 0.5 / t.sqrt())).abs() < 1e-7);
        assert!((inst.value_qt(q, t) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn spline_alpha_is_monotone() {
        let s = MonotoneSpline::new(vec![[1.0, 1.0], [1.3, 1.3], [1.6, 1.7], [2.0, 2.2]]).unwrap();
        assert_relative_eq!(s.value(1.3), 1.3, max_relative = 1e-15);
        let mut prev = s.value(1.0);
        for i in 1..=200 {
            let x = 1.0 + i as f64 / 200.0;
            let v = s.value(x);
            assert!(v >= prev);
            prev = v;
            let h = 1e-6;
            let fd = (s.value(x + h) - s.value(x - h)) / (2.0 * h);
            if (x - 1.3).abs() > 1e-3 && (x - 1.6).abs() > 1e-3 {
                assert!((fd - s.derivative(x)).abs() < 1e-5);
            }
        }
        let inst = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            Distribution::uniform(0.0, 1.0).unwrap(),
            Valuation::linear(Alpha::Spline(s)),
            0.5,
        );
        assert!(inst.validate().passed());
    }

    #[test]
    fn json_round_trip_is_stable() {
        let text = r#"{
            "q_dist": {"family": "uniform", "lo": 1.0, "hi": 2.0},
            "t_dist": {"family": "truncated_normal", "mu": 0.5, "sigma": 0.2, "lo": 0.0, "hi": 1.0},
            "valuation": {"kind": "linear", "alpha": {"form": "spline", "knots": [[1.0, 1.0], [2.0, 2.5]]}},
            "reserve": 0.1
        }"#;
        let inst = ProblemInstance::from_json(text).unwrap();
        let once = inst.to_json().unwrap();
        let back = ProblemInstance::from_json(&once).unwrap();
        assert_eq!(inst, back);
        assert_eq!(once, back.to_json().unwrap());
    }

    #[test]
    fn malformed_json_is_reported() {
        assert!(matches!(ProblemInstance::from_json("{"), Err(ModelError::Parse(_))));
        let unknown = r#"{"q_dist":{"family":"uniform","lo":0,"hi":1},"t_dist":{"family":"uniform","lo":0,"hi":1},
            "valuation":{"kind":"linear","alpha":{"form":"affine","intercept":1,"slope":1}},"reserve":0.5,"extra":1}"#;
        assert!(ProblemInstance::from_json(unknown).is_err());
    }
}
