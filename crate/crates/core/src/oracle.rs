//! Brute-force optimality check on discretized instances.
//!
//! Qualities and types are replaced by cell midpoints carrying exact cdf
//! masses. A discrete threshold mechanism trades at type `j` for quality
//! indices `i >= k[j]`; buyer payments follow from the discrete envelope
//! formula with `U_b = 0` at the lowest type. Every non-increasing `k` is
//! enumerated, ranked by revenue, and the best one that satisfies all
//! original constraints exactly (up to rounding) is returned.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanism::Mechanism;
use crate::model::ProblemInstance;
use crate::solver::revenue;

/// Default cap on enumerated vectors; admits 12x12 grids (2,704,156 vectors).
pub const DEFAULT_LIMIT: u128 = 3_000_000;

/// Slack for rounding in the discrete constraint sums.
pub const DISCRETE_TOLERANCE: f64 = 1e-12;

const CHUNK: u128 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration would visit {count} threshold vectors, above the limit {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("grid sizes must be positive (q: {q}, t: {t})")]
    EmptyGrid { q: usize, t: usize },
    #[error("cell masses sum to {sum}, not 1")]
    Masses { sum: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no feasible threshold vector found")]
    NoFeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    pub q_points: Vec<f64>,
    pub q_masses: Vec<f64>,
    pub t_points: Vec<f64>,
    pub t_masses: Vec<f64>,
    /// `values[j][i] = v(q_i, t_j)`
    pub values: Vec<Vec<f64>>,
    /// `virtuals[j][i]`: discrete virtual surplus of cell `(i, j)`.
    pub virtuals: Vec<Vec<f64>>,
    pub reserve: f64,
    /// Price charged to types that never trade when no type trades at all.
    pub no_trade_price: f64,
}

fn cells(d: &crate::dist::Distribution, n: usize) -> (Vec<f64>, Vec<f64>) {
    let edges: Vec<f64> = (0..=n)
        .map(|i| {
            if i == n {
                d.hi()
            } else {
                d.lo() + d.width() * i as f64 / n as f64
            }
        })
        .collect();
    let points = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let masses = edges.windows(2).map(|w| d.cdf(w[1]) - d.cdf(w[0])).collect();
    (points, masses)
}

impl DiscreteInstance {
    /// Discretizes on `n_q x n_t` equal-width cells.
    pub fn from_instance(inst: &ProblemInstance, n_q: usize, n_t: usize) -> Result<Self, OracleError> {
        if n_q == 0 || n_t == 0 {
            return Err(OracleError::EmptyGrid { q: n_q, t: n_t });
        }
        let (q_points, q_masses) = cells(&inst.q_dist, n_q);
        let (t_points, t_masses) = cells(&inst.t_dist, n_t);
        Self::from_parts(
            q_points,
            q_masses,
            t_points,
            t_masses,
            |q, t| inst.value(q, t),
            inst.reserve,
            Some(inst.value(inst.q_hi(), inst.t_hi()) + 1.0),
        )
    }

    /// Builds a discrete instance from explicit points and masses.
    /// `no_trade_price` defaults to the largest value plus one.
    pub fn from_parts(
        q_points: Vec<f64>,
        q_masses: Vec<f64>,
        t_points: Vec<f64>,
        t_masses: Vec<f64>,
        value: impl Fn(f64, f64) -> f64,
        reserve: f64,
        no_trade_price: Option<f64>,
    ) -> Result<Self, OracleError> {
        if q_points.is_empty() || t_points.is_empty() {
            return Err(OracleError::EmptyGrid {
                q: q_points.len(),
                t: t_points.len(),
            });
        }
        if q_points.len() != q_masses.len() || t_points.len() != t_masses.len() {
            return Err(OracleError::Shape("points and masses differ in length".into()));
        }
        for masses in [&q_masses, &t_masses] {
            let sum: f64 = masses.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || masses.iter().any(|&m| m <= 0.0) {
                return Err(OracleError::Masses { sum });
            }
        }
        let values: Vec<Vec<f64>> = t_points
            .iter()
            .map(|&t| q_points.iter().map(|&q| value(q, t)).collect())
            .collect();
        let n_t = t_points.len();
        let mut upper = 1.0;
        let mut virtuals = Vec::with_capacity(n_t);
        for j in 0..n_t {
            // 1 - F at the right edge of cell j
            upper -= t_masses[j];
            let tail = if j + 1 == n_t { 0.0 } else { upper.max(0.0) };
            let row = (0..q_points.len())
                .map(|i| {
                    let rent = if j + 1 == n_t {
                        0.0
                    } else {
                        (values[j + 1][i] - values[j][i]) * tail / t_masses[j]
                    };
                    values[j][i] - rent - reserve
                })
                .collect();
            virtuals.push(row);
        }
        let top = values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            q_points,
            q_masses,
            t_points,
            t_masses,
            values,
            virtuals,
            reserve,
            no_trade_price: no_trade_price.unwrap_or(top + 1.0),
        })
    }

    pub fn n_q(&self) -> usize {
        self.q_points.len()
    }

    pub fn n_t(&self) -> usize {
        self.t_points.len()
    }

    /// Discrete MHR analog: every quality's virtual surplus is non-decreasing in `t`.
    pub fn virtuals_monotone_in_t(&self) -> bool {
        (0..self.n_q()).all(|i| (1..self.n_t()).all(|j| self.virtuals[j][i] >= self.virtuals[j - 1][i]))
    }

    /// Trade iff the cell's virtual surplus is non-negative: `k[j]` is the first
    /// index with `virtuals[j][i] >= 0` (`n_q` if none).
    pub fn pointwise_thresholds(&self) -> Vec<usize> {
        self.virtuals
            .iter()
            .map(|row| row.iter().position(|&e| e >= 0.0).unwrap_or(self.n_q()))
            .collect()
    }

    /// Index form of a continuous threshold: trade iff `q_i > lambda(t_j)`.
    pub fn discretize<M: Mechanism + ?Sized>(&self, mech: &M) -> Vec<usize> {
        self.t_points
            .iter()
            .map(|&t| {
                let lam = mech.threshold(t);
                self.q_points.partition_point(|&q| q <= lam)
            })
            .collect()
    }

    fn tables(&self) -> Tables {
        Tables::new(self)
    }
}

/// Suffix sums over quality indices, one row per type.
struct Tables {
    n_q: usize,
    /// `above[k] = sum_{i >= k} g_i`
    above: Vec<f64>,
    /// `below[k] = sum_{i < k} g_i`
    below: Vec<f64>,
    /// `value_above[j][k] = sum_{i >= k} g_i v_ij`
    value_above: Vec<Vec<f64>>,
    /// `gain[j][k] = p_j sum_{i >= k} g_i eta_ij`
    gain: Vec<Vec<f64>>,
    masses: Vec<f64>,
    no_trade_price: f64,
    top_quality_values: Vec<f64>,
}

fn suffix(xs: impl DoubleEndedIterator<Item = f64> + ExactSizeIterator) -> Vec<f64> {
    let n = xs.len();
    let mut out = vec![0.0; n + 1];
    for (i, x) in xs.enumerate().rev() {
        out[i] = out[i + 1] + x;
    }
    debug_assert_eq!(out.len(), n + 1);
    out
}

impl Tables {
    fn new(d: &DiscreteInstance) -> Self {
        let g = &d.q_masses;
        let mut below = vec![0.0; d.n_q() + 1];
        for i in 0..d.n_q() {
            below[i + 1] = below[i] + g[i];
        }
        Self {
            n_q: d.n_q(),
            above: suffix(g.iter().copied()),
            below,
            value_above: d
                .values
                .iter()
                .map(|row| suffix(row.iter().zip(g).map(|(v, m)| v * m)))
                .collect(),
            gain: d
                .virtuals
                .iter()
                .zip(&d.t_masses)
                .map(|(row, &p)| suffix(row.iter().zip(g).map(|(e, m)| p * e * m)))
                .collect(),
            masses: d.t_masses.clone(),
            no_trade_price: d.no_trade_price,
            top_quality_values: d.values.iter().map(|row| row[d.n_q() - 1]).collect(),
        }
    }

    fn rewritten_revenue(&self, k: &[usize]) -> f64 {
        k.iter().enumerate().map(|(j, &kj)| self.gain[j][kj]).sum()
    }

    fn trade_probability(&self, k: &[usize]) -> f64 {
        k.iter().zip(&self.masses).map(|(&kj, p)| p * self.above[kj]).sum()
    }

    /// Envelope utilities and payments for `k`.
    fn envelope(&self, k: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let n_t = k.len();
        let mut u = vec![0.0; n_t];
        for j in 1..n_t {
            let prev = k[j - 1];
            u[j] = u[j - 1] + self.value_above[j][prev] - self.value_above[j - 1][prev];
        }
        let idle = match k.iter().position(|&kj| kj < self.n_q) {
            Some(first) => self.top_quality_values[first],
            None => self.no_trade_price,
        };
        let pay = (0..n_t)
            .map(|j| {
                if k[j] < self.n_q {
                    (self.value_above[j][k[j]] - u[j]) / self.above[k[j]]
                } else {
                    idle
                }
            })
            .collect();
        (u, pay)
    }

    /// Largest signed violation over every original buyer constraint.
    fn worst_violation(&self, k: &[usize], pay: &[f64]) -> (f64, Option<(usize, usize)>) {
        let n_t = k.len();
        let u: Vec<f64> = (0..n_t)
            .map(|j| self.value_above[j][k[j]] - pay[j] * self.above[k[j]])
            .collect();
        let mut worst = f64::NEG_INFINITY;
        let mut at = None;
        for j in 0..n_t {
            let prior = self.value_above[j][0];
            for jr in 0..n_t {
                let kr = k[jr];
                let obey = self.value_above[j][kr] - pay[jr] * self.above[kr];
                let buy_on_zero = (prior - self.value_above[j][kr]) - pay[jr] * self.below[kr];
                let best = obey.max(0.0) + buy_on_zero.max(0.0);
                let v = best - u[j];
                if v > worst {
                    worst = v;
                    at = Some((j, jr));
                }
            }
        }
        (worst, at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMechanism {
    pub threshold_index: Vec<usize>,
    pub payments: Vec<f64>,
    pub pay_seller: f64,
}

impl DiscreteMechanism {
    /// Envelope payments for the threshold vector `k`, `U_b = 0` at the lowest type.
    pub fn envelope(dinst: &DiscreteInstance, k: Vec<usize>) -> Result<Self, OracleError> {
        check_shape(dinst, &k)?;
        let (_, payments) = dinst.tables().envelope(&k);
        Ok(Self {
            threshold_index: k,
            payments,
            pay_seller: dinst.reserve,
        })
    }

    pub fn no_trade(dinst: &DiscreteInstance) -> Self {
        Self {
            threshold_index: vec![dinst.n_q(); dinst.n_t()],
            payments: vec![dinst.no_trade_price; dinst.n_t()],
            pay_seller: dinst.reserve,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.threshold_index.windows(2).all(|w| w[1] <= w[0])
    }
}

fn check_shape(dinst: &DiscreteInstance, k: &[usize]) -> Result<(), OracleError> {
    if k.len() != dinst.n_t() || k.iter().any(|&x| x > dinst.n_q()) {
        return Err(OracleError::Shape(format!(
            "threshold vector of length {} with max {:?} on a {}x{} grid",
            k.len(),
            k.iter().max(),
            dinst.n_q(),
            dinst.n_t()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteEvaluation {
    pub revenue: f64,
    /// Revenue through the discrete virtual surplus (meaningful for envelope payments).
    pub revenue_rewritten: f64,
    pub trade_probability: f64,
    pub worst_original_violation: f64,
    /// `(true type index, report index)` of the worst violation.
    pub worst_at: Option<(usize, usize)>,
    pub buyer_utilities: Vec<f64>,
}

/// Objective and all original constraints with sums in place of integrals.
/// The seller side holds exactly when `pay_seller` equals the reserve and is
/// folded in as `|P_s - r|`.
pub fn evaluate_discrete(
    dinst: &DiscreteInstance,
    dmech: &DiscreteMechanism,
) -> Result<DiscreteEvaluation, OracleError> {
    let k = &dmech.threshold_index;
    check_shape(dinst, k)?;
    if dmech.payments.len() != k.len() {
        return Err(OracleError::Shape("payments and thresholds differ in length".into()));
    }
    let tables = dinst.tables();
    let revenue = (0..k.len())
        .map(|j| dinst.t_masses[j] * tables.above[k[j]] * (dmech.payments[j] - dmech.pay_seller))
        .sum();
    let (worst, at) = tables.worst_violation(k, &dmech.payments);
    let seller = (dmech.pay_seller - dinst.reserve).abs();
    let utilities = (0..k.len())
        .map(|j| tables.value_above[j][k[j]] - dmech.payments[j] * tables.above[k[j]])
        .collect();
    Ok(DiscreteEvaluation {
        revenue,
        revenue_rewritten: tables.rewritten_revenue(k)
            - (tables.value_above[0][k[0]] - dmech.payments[0] * tables.above[k[0]]),
        trade_probability: tables.trade_probability(k),
        worst_original_violation: worst.max(seller),
        worst_at: if seller > worst { None } else { at },
        buyer_utilities: utilities,
    })
}

/// Number of non-increasing vectors of length `len` with entries in `0..=max`.
pub fn count_monotone(len: usize, max: usize) -> u128 {
    binomial((len + max) as u128, max.min(len) as u128)
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul(n - i) {
            Some(x) => x / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// The `index`-th non-increasing vector in lexicographic order.
fn unrank(mut index: u128, len: usize, max: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut cap = max;
    for pos in 0..len {
        let rest = len - pos - 1;
        let mut chosen = cap;
        for v in 0..=cap {
            let c = count_monotone(rest, v);
            if index < c {
                chosen = v;
                break;
            }
            index -= c;
        }
        out.push(chosen);
        cap = chosen;
    }
    out
}

/// Advances to the lexicographic successor; false when `k` was the last one.
fn successor(k: &mut [usize], max: usize) -> bool {
    for p in (0..k.len()).rev() {
        let cap = if p == 0 { max } else { k[p - 1] };
        if k[p] < cap {
            k[p] += 1;
            for x in &mut k[p + 1..] {
                *x = 0;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    revenue: f64,
    trade: f64,
    k: Vec<usize>,
}

/// Higher revenue, then higher trade probability, then lexicographically smaller `k`.
fn beats(revenue: f64, trade: f64, k: &[usize], other: &Candidate) -> bool {
    match revenue.total_cmp(&other.revenue) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match trade.total_cmp(&other.trade) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => k < other.k.as_slice(),
        },
    }
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    beats(a.revenue, a.trade, &a.k, b)
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationResult {
    pub best: DiscreteMechanism,
    pub best_revenue: f64,
    pub trade_probability: f64,
    pub worst_original_violation: f64,
    pub candidates: u128,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enumerator {
    pub limit: u128,
    pub tolerance: f64,
}

impl Default for Enumerator {
    fn default() -> Self {
        Self {
            limit: DEFAULT_LIMIT,
            tolerance: DISCRETE_TOLERANCE,
        }
    }
}

impl Enumerator {
    /// Exhaustive search over every non-increasing threshold vector.
    pub fn enumerate_optimal(&self, dinst: &DiscreteInstance) -> Result<EnumerationResult, OracleError> {
        let (n_q, n_t) = (dinst.n_q(), dinst.n_t());
        let total = count_monotone(n_t, n_q);
        if total > self.limit {
            return Err(OracleError::TooLarge {
                count: total,
                limit: self.limit,
            });
        }
        let tables = dinst.tables();
        let chunks = total.div_ceil(CHUNK);
        let best = (0..chunks as u64)
            .into_par_iter()
            .map(|c| {
                let start = c as u128 * CHUNK;
                let len = CHUNK.min(total - start);
                let mut k = unrank(start, n_t, n_q);
                let mut best: Option<Candidate> = None;
                for step in 0..len {
                    if step > 0 {
                        successor(&mut k, n_q);
                    }
                    let revenue = tables.rewritten_revenue(&k);
                    let trade = tables.trade_probability(&k);
                    if let Some(b) = &best {
                        if !beats(revenue, trade, &k, b) {
                            continue;
                        }
                    }
                    let (_, pay) = tables.envelope(&k);
                    let (worst, _) = tables.worst_violation(&k, &pay);
                    if worst <= self.tolerance {
                        best = Some(Candidate {
                            revenue,
                            trade,
                            k: k.clone(),
                        });
                    }
                }
                best
            })
            .reduce(|| None, pick)
            .ok_or(OracleError::NoFeasible)?;

        let mech = DiscreteMechanism::envelope(dinst, best.k)?;
        let eval = evaluate_discrete(dinst, &mech)?;
        Ok(EnumerationResult {
            best: mech,
            best_revenue: best.revenue,
            trade_probability: best.trade,
            worst_original_violation: eval.worst_original_violation,
            candidates: total,
        })
    }
}

pub fn enumerate_optimal(dinst: &DiscreteInstance) -> Result<EnumerationResult, OracleError> {
    Enumerator::default().enumerate_optimal(dinst)
}

/// Revenue-maximizing non-increasing threshold vector by dynamic programming
/// over types. Does not impose the original constraints; used for grids too
/// large to enumerate. Ties prefer higher trade probability.
pub fn optimize_monotone(dinst: &DiscreteInstance) -> (Vec<usize>, f64) {
    let tables = dinst.tables();
    let (n_q, n_t) = (dinst.n_q(), dinst.n_t());
    let key = |j: usize, k: usize| (tables.gain[j][k], tables.masses[j] * tables.above[k]);
    let add = |a: (f64, f64), b: (f64, f64)| (a.0 + b.0, a.1 + b.1);
    let gt = |a: (f64, f64), b: (f64, f64)| match a.0.total_cmp(&b.0) {
        Ordering::Equal => a.1 > b.1,
        o => o == Ordering::Greater,
    };

    // best[j][k]: best value of types j.. given k[j] = k; later types may only go lower.
    let mut best = vec![vec![(0.0, 0.0); n_q + 1]; n_t];
    let mut arg = vec![vec![0usize; n_q + 1]; n_t];
    for k in 0..=n_q {
        best[n_t - 1][k] = key(n_t - 1, k);
    }
    for j in (0..n_t - 1).rev() {
        // running best of best[j + 1][0..=k]
        let mut run = best[j + 1][0];
        let mut run_arg = 0;
        for k in 0..=n_q {
            if k > 0 && gt(best[j + 1][k], run) {
                run = best[j + 1][k];
                run_arg = k;
            }
            best[j][k] = add(key(j, k), run);
            arg[j][k] = run_arg;
        }
    }
    let mut k0 = 0;
    for k in 1..=n_q {
        if gt(best[0][k], best[0][k0]) {
            k0 = k;
        }
    }
    let mut ks = vec![k0];
    for j in 0..n_t - 1 {
        ks.push(arg[j][ks[j]]);
    }
    let rev = tables.rewritten_revenue(&ks);
    (ks, rev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Search {
    Enumeration,
    DynamicProgram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub grid_size: usize,
    /// Best discrete revenue.
    pub discrete_opt: f64,
    /// Discrete revenue of the continuous threshold sampled on the grid.
    pub closed_form: f64,
    /// `(discrete_opt - closed_form) / |discrete_opt|`
    pub gap: f64,
    pub search: Search,
    /// Discrete optimum equals the pointwise sign rule.
    pub matches_pointwise_rule: bool,
    /// Discrete optimum equals the sampled continuous threshold.
    pub matches_closed_form: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Revenue of the continuous mechanism by quadrature.
    pub continuous_revenue: f64,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid_size,discrete_opt,closed_form,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                r.grid_size, r.discrete_opt, r.closed_form, r.gap
            ));
        }
        out
    }

    pub fn gaps_shrink(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].gap <= w[0].gap)
    }
}

/// Discrete optimum against the sampled continuous mechanism on square grids.
/// Grids within the enumeration limit are searched exhaustively, larger ones by
/// dynamic programming.
pub fn compare<M: Mechanism + ?Sized>(
    inst: &ProblemInstance,
    mech: &M,
    grid_sizes: &[usize],
    enumerator: &Enumerator,
) -> Result<ComparisonReport, OracleError> {
    let mut rows = Vec::with_capacity(grid_sizes.len());
    for &n in grid_sizes {
        let dinst = DiscreteInstance::from_instance(inst, n, n)?;
        let (k, discrete_opt, search) = if count_monotone(n, n) <= enumerator.limit {
            let r = enumerator.enumerate_optimal(&dinst)?;
            (r.best.threshold_index, r.best_revenue, Search::Enumeration)
        } else {
            let (k, rev) = optimize_monotone(&dinst);
            (k, rev, Search::DynamicProgram)
        };
        let sampled = dinst.discretize(mech);
        let closed_form = dinst.tables().rewritten_revenue(&sampled);
        rows.push(ComparisonRow {
            grid_size: n,
            discrete_opt,
            closed_form,
            gap: (discrete_opt - closed_form) / discrete_opt.abs(),
            search,
            matches_pointwise_rule: k == dinst.pointwise_thresholds(),
            matches_closed_form: k == sampled,
        });
    }
    Ok(ComparisonReport {
        rows,
        continuous_revenue: revenue(inst, mech),
    })
}
