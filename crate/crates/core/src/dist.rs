//! Continuous distributions on compact supports.
//!
//! Every family exposes density, cdf, survival, quantile, hazard rate and the
//! inverse hazard `(1 - F) / f` together with its derivative, which is what the
//! virtual surplus needs. Survival probabilities are computed directly rather
//! than as `1 - cdf` so the inverse hazard stays accurate near the upper end.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::quad::Integrator;
use crate::roots::bisect_predicate;

/// Tolerance on adjacent hazard decreases accepted by [`Distribution::check_mhr`].
pub const MHR_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParameters(String),
    #[error("{x} lies outside the support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
}

/// Parameterisation of a distribution, as written in instance files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Uniform {
        lo: f64,
        hi: f64,
    },
    TruncatedExponential {
        rate: f64,
        lo: f64,
        hi: f64,
    },
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        lo: f64,
        hi: f64,
    },
    /// Density linear between knots `[x, density]`; rescaled to unit mass.
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
}

#[derive(Debug, Clone)]
enum Kernel {
    Uniform {
        width: f64,
    },
    Exponential {
        rate: f64,
        /// 1 - exp(-rate * width)
        mass: f64,
    },
    Normal {
        mu: f64,
        sigma: f64,
        a: f64,
        b: f64,
        mass: f64,
    },
    Piecewise {
        xs: Vec<f64>,
        ys: Vec<f64>,
        /// cdf at each knot
        cum: Vec<f64>,
        /// survival at each knot, summed from the top
        tail: Vec<f64>,
    },
}

/// A validated distribution. Immutable after construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Family", into = "Family")]
pub struct Distribution {
    family: Family,
    lo: f64,
    hi: f64,
    kernel: Kernel,
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
    }
}

impl From<Distribution> for Family {
    fn from(d: Distribution) -> Self {
        d.family
    }
}

impl TryFrom<Family> for Distribution {
    type Error = DistError;

    fn try_from(family: Family) -> Result<Self, Self::Error> {
        Distribution::new(family)
    }
}

fn check_support(lo: f64, hi: f64) -> Result<(), DistError> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(DistError::InvalidParameters(format!(
            "support bounds must be finite, got [{lo}, {hi}]"
        )));
    }
    if lo >= hi {
        return Err(DistError::InvalidParameters(format!(
            "support requires lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn std_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

fn std_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal mass on [a, b], computed on whichever tail avoids cancellation.
fn std_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_sf(a) - std_sf(b)
    } else if b <= 0.0 {
        std_cdf(b) - std_cdf(a)
    } else {
        1.0 - std_cdf(a) - std_sf(b)
    }
}

impl Distribution {
    pub fn new(family: Family) -> Result<Self, DistError> {
        let (lo, hi, kernel) = match &family {
            Family::Uniform { lo, hi } => {
                check_support(*lo, *hi)?;
                (*lo, *hi, Kernel::Uniform { width: hi - lo })
            }
            Family::TruncatedExponential { rate, lo, hi } => {
                check_support(*lo, *hi)?;
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(DistError::InvalidParameters(format!(
                        "exponential rate must be positive and finite, got {rate}"
                    )));
                }
                let mass = -(-rate * (hi - lo)).exp_m1();
                (*lo, *hi, Kernel::Exponential { rate: *rate, mass })
            }
            Family::TruncatedNormal { mu, sigma, lo, hi } => {
                check_support(*lo, *hi)?;
                if !(mu.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return Err(DistError::InvalidParameters(format!(
                        "normal needs finite mu and positive sigma, got mu={mu}, sigma={sigma}"
                    )));
                }
                let a = (lo - mu) / sigma;
                let b = (hi - mu) / sigma;
                let mass = std_mass(a, b);
                if !(mass > 0.0) || std_pdf(a) == 0.0 || std_pdf(b) == 0.0 {
                    return Err(DistError::InvalidParameters(
                        "truncation window carries no representable density".into(),
                    ));
                }
                let kernel = Kernel::Normal {
                    mu: *mu,
                    sigma: *sigma,
                    a,
                    b,
                    mass,
                };
                (*lo, *hi, kernel)
            }
            Family::PiecewiseLinear { knots } => Self::piecewise_kernel(knots)?,
        };
        Ok(Self { family, lo, hi, kernel })
    }

    fn piecewise_kernel(knots: &[[f64; 2]]) -> Result<(f64, f64, Kernel), DistError> {
        if knots.len() < 2 {
            return Err(DistError::InvalidParameters(
                "piecewise-linear density needs at least two knots".into(),
            ));
        }
        let xs: Vec<f64> = knots.iter().map(|k| k[0]).collect();
        let raw: Vec<f64> = knots.iter().map(|k| k[1]).collect();
        if xs.iter().chain(raw.iter()).any(|v| !v.is_finite()) {
            return Err(DistError::InvalidParameters("knots must be finite".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DistError::InvalidParameters(
                "knot abscissae must be strictly increasing".into(),
            ));
        }
        // The density may vanish only at the upper endpoint.
        let last = raw.len() - 1;
        if let Some(i) = raw[..last].iter().position(|&y| y <= 0.0) {
            return Err(DistError::InvalidParameters(format!(
                "density must be positive except at the upper endpoint; knot {i} has {}",
                raw[i]
            )));
        }
        if raw[last] < 0.0 {
            return Err(DistError::InvalidParameters("density must be non-negative".into()));
        }
        let areas: Vec<f64> = (0..last)
            .map(|i| 0.5 * (xs[i + 1] - xs[i]) * (raw[i] + raw[i + 1]))
            .collect();
        let total: f64 = areas.iter().sum();
        let ys: Vec<f64> = raw.iter().map(|y| y / total).collect();
        let mut cum = vec![0.0; xs.len()];
        for i in 0..last {
            cum[i + 1] = cum[i] + areas[i] / total;
        }
        cum[last] = 1.0;
        let mut tail = vec![0.0; xs.len()];
        for i in (0..last).rev() {
            tail[i] = tail[i + 1] + areas[i] / total;
        }
        tail[0] = 1.0;
        Ok((xs[0], xs[last], Kernel::Piecewise { xs, ys, cum, tail }))
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::new(Family::Uniform { lo, hi })
    }

    pub fn truncated_exponential(rate: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::new(Family::TruncatedExponential { rate, lo, hi })
    }

    pub fn truncated_normal(mu: f64, sigma: f64, lo: f64, hi: f64) -> Result<Self, DistError> {
        Self::new(Family::TruncatedNormal { mu, sigma, lo, hi })
    }

    pub fn piecewise_linear(knots: Vec<[f64; 2]>) -> Result<Self, DistError> {
        Self::new(Family::PiecewiseLinear { knots })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn require(&self, x: f64) -> Result<(), DistError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(DistError::OutOfSupport {
                x,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Density at `x`; fails outside the support.
    pub fn pdf(&self, x: f64) -> Result<f64, DistError> {
        self.require(x)?;
        Ok(self.density(x))
    }

    /// Density at `x`, zero outside the support.
    pub fn density(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        match &self.kernel {
            Kernel::Uniform { width } => 1.0 / width,
            Kernel::Exponential { rate, mass } => rate * (-rate * (x - self.lo)).exp() / mass,
            Kernel::Normal { mu, sigma, mass, .. } => std_pdf((x - mu) / sigma) / (sigma * mass),
            Kernel::Piecewise { xs, ys, .. } => {
                let i = segment(xs, x);
                let s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
                ys[i] + s * (x - xs[i])
            }
        }
    }

    /// Derivative of the density (right derivative at piecewise knots).
    pub fn density_slope(&self, x: f64) -> f64 {
        match &self.kernel {
            Kernel::Uniform { .. } => 0.0,
            Kernel::Exponential { rate, .. } => -rate * self.density(x),
            Kernel::Normal { mu, sigma, .. } => -(x - mu) / (sigma * sigma) * self.density(x),
            Kernel::Piecewise { xs, ys, .. } => {
                let i = segment(xs, x.clamp(self.lo, self.hi));
                (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])
            }
        }
    }

    /// Cumulative distribution, clamped to 0 below and 1 above the support.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        match &self.kernel {
            Kernel::Uniform { width } => (x - self.lo) / width,
            Kernel::Exponential { rate, mass } => -(-rate * (x - self.lo)).exp_m1() / mass,
            Kernel::Normal { mu, sigma, a, mass, .. } => std_mass(*a, (x - mu) / sigma) / mass,
            Kernel::Piecewise { xs, ys, cum, .. } => {
                let i = segment(xs, x);
                let fx = self.density(x);
                cum[i] + 0.5 * (x - xs[i]) * (ys[i] + fx)
            }
        }
    }

    /// Survival function `1 - F(x)`, computed without cancellation.
    pub fn sf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 1.0;
        }
        if x >= self.hi {
            return 0.0;
        }
        match &self.kernel {
            Kernel::Uniform { width } => (self.hi - x) / width,
            Kernel::Exponential { rate, mass } => {
                (-rate * (x - self.lo)).exp() * -(-rate * (self.hi - x)).exp_m1() / mass
            }
            Kernel::Normal { mu, sigma, b, mass, .. } => std_mass((x - mu) / sigma, *b) / mass,
            Kernel::Piecewise { xs, ys, tail, .. } => {
                let i = segment(xs, x);
                let fx = self.density(x);
                tail[i + 1] + 0.5 * (xs[i + 1] - x) * (fx + ys[i + 1])
            }
        }
    }

    /// Inverse cdf; `u` is clamped to [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        if u == 0.0 {
            return self.lo;
        }
        if u == 1.0 {
            return self.hi;
        }
        let x = match &self.kernel {
            Kernel::Uniform { width } => self.lo + u * width,
            Kernel::Exponential { rate, mass } => self.lo - (-u * mass).ln_1p() / rate,
            Kernel::Normal { .. } => bisect_predicate(|x| self.cdf(x) >= u, self.lo, self.hi, 0.0),
            Kernel::Piecewise { xs, ys, cum, .. } => {
                let i = cum.partition_point(|&c| c <= u).clamp(1, xs.len() - 1) - 1;
                let m = u - cum[i];
                let s = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
                // root of ys[i] d + s d^2 / 2 = m, in the cancellation-free form
                let disc = (ys[i] * ys[i] + 2.0 * s * m).max(0.0);
                xs[i] + 2.0 * m / (ys[i] + disc.sqrt())
            }
        };
        x.clamp(self.lo, self.hi)
    }

    /// Hazard rate `f / (1 - F)`. Returns `+inf` at the upper endpoint.
    pub fn hazard(&self, x: f64) -> Result<f64, DistError> {
        self.require(x)?;
        let s = self.sf(x);
        if s <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(self.density(x) / s)
    }

    /// Inverse hazard `(1 - F) / f`, zero at the upper endpoint.
    pub fn inverse_hazard(&self, x: f64) -> Result<f64, DistError> {
        self.require(x)?;
        Ok(self.inv_hazard(x))
    }

    /// Unchecked inverse hazard; callers guarantee `x` lies in the support.
    pub(crate) fn inv_hazard(&self, x: f64) -> f64 {
        if x >= self.hi {
            return 0.0;
        }
        match &self.kernel {
            Kernel::Uniform { .. } => self.hi - x,
            Kernel::Exponential { rate, .. } => -(-rate * (self.hi - x)).exp_m1() / rate,
            Kernel::Normal { mu, sigma, b, .. } => {
                let z = (x - mu) / sigma;
                sigma * std_mass(z, *b) / std_pdf(z)
            }
            Kernel::Piecewise { .. } => {
                let f = self.density(x);
                if f > 0.0 {
                    self.sf(x) / f
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative of the inverse hazard, `-1 - (1 - F) f' / f^2`.
    pub fn inverse_hazard_slope(&self, x: f64) -> f64 {
        match &self.kernel {
            Kernel::Uniform { .. } => -1.0,
            Kernel::Exponential { rate, .. } => -1.0 + rate * self.inv_hazard(x),
            Kernel::Normal { mu, sigma, .. } => -1.0 + (x - mu) / (sigma * sigma) * self.inv_hazard(x),
            Kernel::Piecewise { .. } => {
                let f = self.density(x);
                if f > 0.0 {
                    -1.0 - self.inv_hazard(x) * self.density_slope(x) / f
                } else {
                    // linear density vanishing at the top: (1 - F) / f = (hi - x) / 2
                    -0.5
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        Integrator::new(1e-12)
            .integrate_with_breaks(|x| x * self.density(x), self.lo, self.hi, self.knots())
            .value
    }

    /// Interior knots where the density has kinks (empty for smooth families).
    pub fn knots(&self) -> &[f64] {
        match &self.kernel {
            Kernel::Piecewise { xs, .. } => xs,
            _ => &[],
        }
    }

    /// Checks that the hazard rate is weakly increasing on an evenly spaced
    /// interior grid of `grid_size` points (at least 16).
    pub fn check_mhr(&self, grid_size: usize) -> MhrReport {
        let n = grid_size.max(16);
        let step = self.width() / (n + 1) as f64;
        let hazards: Vec<f64> = (1..=n)
            .map(|i| {
                let x = self.lo + step * i as f64;
                self.density(x) / self.sf(x)
            })
            .collect();
        let mut worst = 0.0_f64;
        let mut location = None;
        for (i, w) in hazards.windows(2).enumerate() {
            let drop = w[0] - w[1];
            if drop > worst {
                worst = drop;
                location = Some(self.lo + step * (i + 1) as f64);
            }
        }
        MhrReport {
            holds: worst <= MHR_TOLERANCE,
            worst_violation: worst,
            grid_size: n,
            location,
        }
    }

    /// Inverse-transform samples drawn from a caller-owned generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.quantile(rng.random::<f64>())).collect()
    }
}

/// Index `i` of the segment `[xs[i], xs[i + 1]]` holding `x`.
fn segment(xs: &[f64], x: f64) -> usize {
    xs.partition_point(|&k| k <= x).clamp(1, xs.len() - 1) - 1
}

/// Outcome of a monotone-hazard-rate check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhrReport {
    pub holds: bool,
    /// Largest decrease of the hazard between adjacent grid points (0 if none).
    pub worst_violation: f64,
    pub grid_size: usize,
    /// Left grid point of the worst decrease.
    pub location: Option<f64>,
}
