//! Adaptive Gauss-Kronrod (G7/K15) quadrature.
//!
//! Panels are bisected recursively until the local error estimate falls
//! below its share of the absolute tolerance (proportional to panel width)
//! or below a relative floor. Evaluation order is fixed, so results are
//! bit-reproducible.

/// Kronrod abscissae on [-1, 1], descending; the last one is the center.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// Gauss weights for the 7-point rule embedded at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 48;
const MAX_EVALUATIONS: usize = 60_000;
const REL_FLOOR: f64 = 1e-14;

/// Outcome of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Sum of the accepted panels' error estimates.
    pub error: f64,
    pub evaluations: usize,
    /// False when some panel hit the depth limit before meeting tolerance.
    pub converged: bool,
}

/// Adaptive G7/K15 integrator with an absolute tolerance for the whole interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    pub abs_tol: f64,
}

impl Default for Integrator {
    fn default() -> Self {
        Self { abs_tol: 1e-10 }
    }
}

impl Integrator {
    pub fn new(abs_tol: f64) -> Self {
        Self { abs_tol }
    }

    /// Integrates `f` over `[a, b]`. Reversed bounds flip the sign; an empty
    /// interval yields zero without evaluating `f`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> QuadResult {
        if a == b {
            return QuadResult {
                value: 0.0,
                error: 0.0,
                evaluations: 0,
                converged: true,
            };
        }
        if a > b {
            let mut r = self.integrate(f, b, a);
            r.value = -r.value;
            return r;
        }
        let mut acc = Accumulator::new();
        let width = b - a;
        let (value, err, resasc) = kronrod(&f, a, b);
        acc.evaluations += 15;
        let value = self.refine(&f, a, b, value, err, resasc, width, 0, &mut acc);
        QuadResult {
            value,
            error: acc.error,
            evaluations: acc.evaluations,
            converged: acc.converged,
        }
    }

    /// Integrates over `[a, b]` splitting at every breakpoint strictly inside it.
    /// Use this where the integrand has known kinks.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, breaks: &[f64]) -> QuadResult {
        if a >= b {
            return self.integrate(f, a, b);
        }
        let mut points: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut edges = Vec::with_capacity(points.len() + 2);
        edges.push(a);
        edges.extend(points);
        edges.push(b);

        let total = b - a;
        let mut out = QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
        for w in edges.windows(2) {
            let share = Integrator::new(self.abs_tol * (w[1] - w[0]) / total);
            let r = share.integrate(&f, w[0], w[1]);
            out.value += r.value;
            out.error += r.error;
            out.evaluations += r.evaluations;
            out.converged &= r.converged;
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<F: Fn(f64) -> f64>(
        &self,
        f: &F,
        a: f64,
        b: f64,
        value: f64,
        err: f64,
        resasc: f64,
        total_width: f64,
        depth: u32,
        acc: &mut Accumulator,
    ) -> f64 {
        let budget = self.abs_tol * (b - a) / total_width;
        let floor = REL_FLOOR * value.abs().max(resasc);
        let mid = 0.5 * (a + b);
        if err <= budget.max(floor) || mid <= a || mid >= b {
            acc.error += err;
            return value;
        }
        if depth >= MAX_DEPTH || acc.evaluations >= MAX_EVALUATIONS {
            acc.error += err;
            acc.converged = false;
            return value;
        }
        let (lv, le, la) = kronrod(f, a, mid);
        let (rv, re, ra) = kronrod(f, mid, b);
        acc.evaluations += 30;
        let left = self.refine(f, a, mid, lv, le, la, total_width, depth + 1, acc);
        let right = self.refine(f, mid, b, rv, re, ra, total_width, depth + 1, acc);
        left + right
    }
}

struct Accumulator {
    error: f64,
    evaluations: usize,
    converged: bool,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            error: 0.0,
            evaluations: 0,
            converged: true,
        }
    }
}

/// Single K15 panel: (estimate, error estimate, |f - mean| integral).
fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];

    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }

    let mean = 0.5 * res_k;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let err = rescale_error((res_k - res_g) * half, res_abs, res_asc);
    (value, err, res_asc)
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        let min_err = 50.0 * f64::EPSILON * res_abs;
        if min_err > scaled {
            scaled = min_err;
        }
    }
    scaled
}

/// Integrates with the default tolerance and returns only the value.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    Integrator::default().integrate(f, a, b).value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = Integrator::default().integrate(|x| 3.0 * x * x + 2.0 * x - 1.0, 0.0, 2.0);
        assert!((r.value - 10.0).abs() < 1e-13);
        assert!(r.converged);
        assert_eq!(r.evaluations, 15);
    }

    #[test]
    fn smooth_transcendental() {
        let v = integrate(f64::exp, 0.0, 1.0);
        assert!((v - (std::f64::consts::E - 1.0)).abs() < 1e-13);
        let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI);
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn kink_is_handled_adaptively() {
        // |x - 0.3| on [0, 1] = 0.045 + 0.245
        let r = Integrator::new(1e-12).integrate(|x: f64| (x - 0.3).abs(), 0.0, 1.0);
        assert!((r.value - 0.29).abs() < 1e-11, "{r:?}");
        let b = Integrator::new(1e-12).integrate_with_breaks(|x: f64| (x - 0.3).abs(), 0.0, 1.0, &[0.3]);
        assert!((b.value - 0.29).abs() < 1e-15);
        assert!(b.evaluations < r.evaluations);
    }

    #[test]
    fn reversed_and_empty_bounds() {
        assert_eq!(integrate(|x| x, 1.0, 1.0), 0.0);
        let v = integrate(|x| x, 1.0, 0.0);
        assert!((v + 0.5).abs() < 1e-15);
    }

    #[test]
    fn endpoint_singular_derivative() {
        // sqrt(x) on [0,1] = 2/3
        let v = integrate(f64::sqrt, 0.0, 1.0);
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }
}
