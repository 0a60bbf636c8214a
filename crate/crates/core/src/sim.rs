//! Monte Carlo execution of the direct mechanism: draw `(q, t)`, report
//! truthfully, signal, obey, transfer.
//!
//! Runs are split into fixed blocks; block `b` draws from the ChaCha stream
//! `b` of the seed, so results do not depend on the worker count. Block
//! statistics are merged pairwise in block order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mechanism::Mechanism;
use crate::model::ProblemInstance;

pub const BLOCK: u64 = 1 << 14;
pub const BUCKETS: usize = 20;
/// Smallest standard error used when judging deviation gains.
pub const SE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Recommend trade to both parties.
    TradeTrade,
    /// Recommend no trade to both parties.
    NoNo,
}

impl Signal {
    pub fn of<M: Mechanism + ?Sized>(mech: &M, q: f64, t: f64) -> Self {
        if mech.recommends_trade(q, t) {
            Signal::TradeTrade
        } else {
            Signal::NoNo
        }
    }
}

/// Count, mean and centered second moment; merged with Chan's update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / count as f64;
        Self {
            count,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * w,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Sample standard deviation over `sqrt(n)`.
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketUtility {
    pub t_lo: f64,
    pub t_hi: f64,
    pub count: u64,
    pub mean_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub n_runs: u64,
    pub mean_revenue: f64,
    pub se_revenue: f64,
    pub mean_buyer_utility_by_bucket: Vec<BucketUtility>,
    pub trade_rate: f64,
    pub se_trade_rate: f64,
    /// Largest `|P_s(q) - r|` over trades; zero means the seller nets exactly
    /// nothing in every run.
    pub max_abs_seller_surplus: f64,
    pub seed: u64,
}

impl SimulationResult {
    pub fn buckets_csv(&self) -> String {
        let mut out = String::from("t_lo,t_hi,count,mean_buyer_utility\n");
        for b in &self.mean_buyer_utility_by_bucket {
            out.push_str(&format!(
                "{:.16e},{:.16e},{},{:.16e}\n",
                b.t_lo, b.t_hi, b.count, b.mean_utility
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Block {
    revenue: Moments,
    trade: Moments,
    buckets: Vec<Moments>,
    seller: f64,
}

impl Block {
    fn empty() -> Self {
        Self {
            revenue: Moments::default(),
            trade: Moments::default(),
            buckets: vec![Moments::default(); BUCKETS],
            seller: 0.0,
        }
    }

    fn merge(self, other: Self) -> Self {
        Self {
            revenue: self.revenue.merge(other.revenue),
            trade: self.trade.merge(other.trade),
            buckets: self
                .buckets
                .iter()
                .zip(&other.buckets)
                .map(|(a, b)| a.merge(*b))
                .collect(),
            seller: self.seller.max(other.seller),
        }
    }
}

/// Merges adjacent pairs until one remains, so the result depends only on
/// the block sequence.
fn pairwise<T: Clone>(mut items: Vec<T>, merge: impl Fn(T, T) -> T, empty: impl Fn() -> T) -> T {
    if items.is_empty() {
        return empty();
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => merge(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop().unwrap()
}

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

fn blocks(n: u64) -> impl IndexedParallelIterator<Item = (u64, u64)> {
    let count = n.div_ceil(BLOCK) as usize;
    (0..count).into_par_iter().map(move |b| {
        let b = b as u64;
        (b, BLOCK.min(n - b * BLOCK))
    })
}

/// Simulates `n` truthful, obedient interactions.
pub fn run<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, n: u64, seed: u64) -> SimulationResult {
    let (t_lo, t_hi) = (inst.t_lo(), inst.t_hi());
    let width = (t_hi - t_lo) / BUCKETS as f64;
    let stats: Vec<Block> = blocks(n)
        .map(|(b, len)| {
            let mut rng = block_rng(seed, b);
            let mut acc = Block::empty();
            for _ in 0..len {
                let q = inst.q_dist.quantile(rng.random::<f64>());
                let t = inst.t_dist.quantile(rng.random::<f64>());
                let bucket = (((t - t_lo) / width) as usize).min(BUCKETS - 1);
                match Signal::of(mech, q, t) {
                    Signal::TradeTrade => {
                        let pay = mech.pay_buyer(t);
                        let seller_pay = mech.pay_seller(q);
                        acc.revenue.push(pay - seller_pay);
                        acc.trade.push(1.0);
                        acc.buckets[bucket].push(inst.value(q, t) - pay);
                        acc.seller = acc.seller.max((seller_pay - inst.reserve).abs());
                    }
                    Signal::NoNo => {
                        acc.revenue.push(0.0);
                        acc.trade.push(0.0);
                        acc.buckets[bucket].push(0.0);
                    }
                }
            }
            acc
        })
        .collect();
    let total = pairwise(stats, Block::merge, Block::empty);
    SimulationResult {
        n_runs: n,
        mean_revenue: total.revenue.mean,
        se_revenue: total.revenue.standard_error(),
        mean_buyer_utility_by_bucket: total
            .buckets
            .iter()
            .enumerate()
            .map(|(i, m)| BucketUtility {
                t_lo: t_lo + width * i as f64,
                t_hi: if i + 1 == BUCKETS {
                    t_hi
                } else {
                    t_lo + width * (i + 1) as f64
                },
                count: m.count,
                mean_utility: m.mean,
            })
            .collect(),
        trade_rate: total.trade.mean,
        se_trade_rate: total.trade.standard_error(),
        max_abs_seller_surplus: total.seller,
        seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationResult {
    pub mean: f64,
    pub se: f64,
    pub n_runs: u64,
}

impl DeviationResult {
    /// Standard error with [`SE_FLOOR`] applied.
    pub fn se_floored(&self) -> f64 {
        self.se.max(SE_FLOOR)
    }
}

/// How a deviating buyer reacts to each signal, with the report's threshold
/// and price cached.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plan {
    threshold: f64,
    pay: f64,
    buy_on_trade: bool,
    buy_on_no: bool,
}

fn plan<M: Mechanism + ?Sized>(inst: &ProblemInstance, mech: &M, t: f64, report: f64, best_response: bool) -> Plan {
    let threshold = mech.threshold(report);
    let pay = mech.pay_buyer(report);
    if !best_response {
        return Plan {
            threshold,
            pay,
            buy_on_trade: true,
            buy_on_no: false,
        };
    }
    // Posterior payoff sign of buying after each signal.
    let lam = threshold.clamp(inst.q_lo(), inst.q_hi());
    let above = inst.q_dist.sf(lam);
    let below = inst.q_dist.cdf(lam);
    let value_above = if above > 0.0 {
        inst.expected_value_above(lam, t)
    } else {
        0.0
    };
    let value_all = inst.expected_value_above(inst.q_lo(), t);
    Plan {
        threshold,
        pay,
        buy_on_trade: above > 0.0 && value_above - pay * above >= 0.0,
        buy_on_no: below > 0.0 && (value_all - value_above) - pay * below > 0.0,
    }
}

fn realized(inst: &ProblemInstance, q: f64, t: f64, plan: Plan) -> f64 {
    // Same tie rule as the signal: trade needs q strictly above the threshold.
    let buys = if q > plan.threshold {
        plan.buy_on_trade
    } else {
        plan.buy_on_no
    };
    if buys {
        inst.value(q, t) - plan.pay
    } else {
        0.0
    }
}

/// Mean realized utility of a buyer of `true_type` reporting `report_type`.
/// With `best_response` the buyer buys after a signal iff the posterior payoff
/// of buying is positive; otherwise the buyer obeys.
pub fn run_deviation<M: Mechanism + ?Sized>(
    inst: &ProblemInstance,
    mech: &M,
    true_type: f64,
    report_type: f64,
    best_response: bool,
    n: u64,
    seed: u64,
) -> DeviationResult {
    let p = plan(inst, mech, true_type, report_type, best_response);
    let parts: Vec<Moments> = blocks(n)
        .map(|(b, len)| {
            let mut rng = block_rng(seed, b);
            let mut m = Moments::default();
            for _ in 0..len {
                let q = inst.q_dist.quantile(rng.random::<f64>());
                m.push(realized(inst, q, true_type, p));
            }
            m
        })
        .collect();
    let total = pairwise(parts, Moments::merge, Moments::default);
    DeviationResult {
        mean: total.mean,
        se: total.standard_error(),
        n_runs: n,
    }
}

/// Paired estimate of `E[u(deviate)] - E[u(truthful, obedient)]` for a buyer of
/// `true_type`, both evaluated on the same quality draws.
pub fn deviation_gain<M: Mechanism + ?Sized>(
    inst: &ProblemInstance,
    mech: &M,
    true_type: f64,
    report_type: f64,
    n: u64,
    seed: u64,
) -> DeviationResult {
    let dev = plan(inst, mech, true_type, report_type, true);
    let honest = plan(inst, mech, true_type, true_type, false);
    let parts: Vec<Moments> = blocks(n)
        .map(|(b, len)| {
            let mut rng = block_rng(seed, b);
            let mut m = Moments::default();
            for _ in 0..len {
                let q = inst.q_dist.quantile(rng.random::<f64>());
                let gain = realized(inst, q, true_type, dev) - realized(inst, q, true_type, honest);
                m.push(gain);
            }
            m
        })
        .collect();
    let total = pairwise(parts, Moments::merge, Moments::default);
    DeviationResult {
        mean: total.mean,
        se: total.standard_error(),
        n_runs: n,
    }
}

/// One deviation probe: paired gain of a buyer of `true_type` who reports
/// `report_type` and best-responds to the signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub true_type: f64,
    pub report_type: f64,
    pub gain: f64,
    pub se: f64,
    /// `gain / max(se, SE_FLOOR)`
    pub z: f64,
}

/// `count` probes at type pairs drawn uniformly from `T x T`, each from
/// `runs` paired draws. Probe `i` uses seed `seed + 1 + i`.
pub fn probe_deviations<M: Mechanism + ?Sized>(
    inst: &ProblemInstance,
    mech: &M,
    count: usize,
    runs: u64,
    seed: u64,
) -> Vec<Probe> {
    // The last stream is never reached by `run` blocks.
    let mut rng = block_rng(seed, u64::MAX);
    let (lo, hi) = (inst.t_lo(), inst.t_hi());
    let pairs: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.random_range(lo..=hi), rng.random_range(lo..=hi)))
        .collect();
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(t, r))| {
            let g = deviation_gain(inst, mech, t, r, runs, seed.wrapping_add(1 + i as u64));
            Probe {
                true_type: t,
                report_type: r,
                gain: g.mean,
                se: g.se,
                z: g.mean / g.se_floored(),
            }
        })
        .collect()
}
