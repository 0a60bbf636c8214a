//! Direct threshold mechanisms as seen by the verifier and the simulator.
//!
//! A mechanism recommends trade for the report profile `(q, t)` iff
//! `q > threshold(t)`, charges the buyer `pay_buyer(t)` and pays the seller
//! `pay_seller(q)` when trade happens.

use std::sync::Arc;

use thiserror::Error;

pub trait Mechanism: Sync {
    fn threshold(&self, t: f64) -> f64;

    fn pay_buyer(&self, t: f64) -> f64;

    fn pay_seller(&self, q: f64) -> f64;

    /// Signal rule. Ties `q == threshold(t)` resolve to no trade.
    fn recommends_trade(&self, q: f64, t: f64) -> bool {
        q > self.threshold(t)
    }

    /// Buyer types where the threshold or payment has a kink.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn threshold(&self, t: f64) -> f64 {
        (**self).threshold(t)
    }

    fn pay_buyer(&self, t: f64) -> f64 {
        (**self).pay_buyer(t)
    }

    fn pay_seller(&self, q: f64) -> f64 {
        (**self).pay_seller(q)
    }

    fn breakpoints(&self) -> Vec<f64> {
        (**self).breakpoints()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("sample vectors must have equal length >= 2 (t: {t}, lambda: {lambda}, pay: {pay})")]
    Shape { t: usize, lambda: usize, pay: usize },
    #[error("sample abscissae must be finite and strictly increasing")]
    Abscissae,
    #[error("non-finite sample value at row {0}")]
    NonFinite(usize),
}

/// Mechanism given by samples on a `t` grid with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledMechanism {
    t: Vec<f64>,
    lambda: Vec<f64>,
    pay: Vec<f64>,
    pay_seller: f64,
}

impl SampledMechanism {
    pub fn new(t: Vec<f64>, lambda: Vec<f64>, pay: Vec<f64>, pay_seller: f64) -> Result<Self, MechanismError> {
        if t.len() < 2 || t.len() != lambda.len() || t.len() != pay.len() {
            return Err(MechanismError::Shape {
                t: t.len(),
                lambda: lambda.len(),
                pay: pay.len(),
            });
        }
        if t.iter().any(|x| !x.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MechanismError::Abscissae);
        }
        if let Some(i) = (0..t.len()).find(|&i| !(lambda[i].is_finite() && pay[i].is_finite())) {
            return Err(MechanismError::NonFinite(i));
        }
        Ok(Self {
            t,
            lambda,
            pay,
            pay_seller,
        })
    }

    /// Samples another mechanism on `grid`.
    pub fn from_mechanism<M: Mechanism>(mech: &M, grid: &[f64], pay_seller: f64) -> Result<Self, MechanismError> {
        Self::new(
            grid.to_vec(),
            grid.iter().map(|&t| mech.threshold(t)).collect(),
            grid.iter().map(|&t| mech.pay_buyer(t)).collect(),
            pay_seller,
        )
    }

    pub fn grid(&self) -> &[f64] {
        &self.t
    }

    pub fn lambda_samples(&self) -> &[f64] {
        &self.lambda
    }

    pub fn pay_samples(&self) -> &[f64] {
        &self.pay
    }

    pub fn pay_samples_mut(&mut self) -> &mut [f64] {
        &mut self.pay
    }

    fn interpolate(&self, ys: &[f64], x: f64) -> f64 {
        let n = self.t.len();
        if x <= self.t[0] {
            return ys[0];
        }
        if x >= self.t[n - 1] {
            return ys[n - 1];
        }
        let i = self.t.partition_point(|&k| k <= x) - 1;
        let w = (x - self.t[i]) / (self.t[i + 1] - self.t[i]);
        if w == 0.0 {
            ys[i]
        } else {
            ys[i] + w * (ys[i + 1] - ys[i])
        }
    }
}

impl Mechanism for SampledMechanism {
    fn threshold(&self, t: f64) -> f64 {
        self.interpolate(&self.lambda, t)
    }

    fn pay_buyer(&self, t: f64) -> f64 {
        self.interpolate(&self.pay, t)
    }

    fn pay_seller(&self, _q: f64) -> f64 {
        self.pay_seller
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.t.clone()
    }
}

type Curve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Mechanism assembled from closures; handy for adversarial fixtures.
#[derive(Clone)]
pub struct FnMechanism {
    threshold: Curve,
    pay_buyer: Curve,
    pay_seller: Curve,
    breaks: Vec<f64>,
}

impl FnMechanism {
    pub fn new(
        threshold: impl Fn(f64) -> f64 + Send + Sync + 'static,
        pay_buyer: impl Fn(f64) -> f64 + Send + Sync + 'static,
        pay_seller: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            threshold: Arc::new(threshold),
            pay_buyer: Arc::new(pay_buyer),
            pay_seller: Arc::new(pay_seller),
            breaks: Vec::new(),
        }
    }

    /// A mechanism that never recommends trade.
    pub fn no_trade(q_hi: f64, price: f64, reserve: f64) -> Self {
        Self::new(move |_| q_hi, move |_| price, move |_| reserve)
    }

    pub fn with_breakpoints(mut self, breaks: Vec<f64>) -> Self {
        self.breaks = breaks;
        self
    }
}

impl std::fmt::Debug for FnMechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnMechanism").field("breaks", &self.breaks).finish()
    }
}

impl Mechanism for FnMechanism {
    fn threshold(&self, t: f64) -> f64 {
        (self.threshold)(t)
    }

    fn pay_buyer(&self, t: f64) -> f64 {
        (self.pay_buyer)(t)
    }

    fn pay_seller(&self, q: f64) -> f64 {
        (self.pay_seller)(q)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// Perturbation of another mechanism: shifted threshold (clamped to Q),
/// shifted buyer payment and shifted seller payment.
#[derive(Debug, Clone)]
pub struct Adjusted<M> {
    base: M,
    q_lo: f64,
    q_hi: f64,
    threshold_shift: f64,
    payment_shift: f64,
    seller_shift: f64,
}

impl<M: Mechanism> Adjusted<M> {
    pub fn new(base: M, q_lo: f64, q_hi: f64) -> Self {
        Self {
            base,
            q_lo,
            q_hi,
            threshold_shift: 0.0,
            payment_shift: 0.0,
            seller_shift: 0.0,
        }
    }

    pub fn shift_threshold(mut self, by: f64) -> Self {
        self.threshold_shift = by;
        self
    }

    pub fn shift_buyer_payment(mut self, by: f64) -> Self {
        self.payment_shift = by;
        self
    }

    pub fn shift_seller_payment(mut self, by: f64) -> Self {
        self.seller_shift = by;
        self
    }
}

impl<M: Mechanism> Mechanism for Adjusted<M> {
    fn threshold(&self, t: f64) -> f64 {
        if self.threshold_shift == 0.0 {
            return self.base.threshold(t);
        }
        (self.base.threshold(t) + self.threshold_shift).clamp(self.q_lo, self.q_hi)
    }

    fn pay_buyer(&self, t: f64) -> f64 {
        self.base.pay_buyer(t) + self.payment_shift
    }

    fn pay_seller(&self, q: f64) -> f64 {
        self.base.pay_seller(q) + self.seller_shift
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.base.breakpoints()
    }
}
