use mediation::dist::Distribution;
use mediation::model::{Alpha, ProblemInstance, Valuation};
use mediation::oracle::*;
use mediation::stock;
use proptest::prelude::*;

fn small_instance() -> impl Strategy<Value = (DiscreteInstance, usize, usize)> {
    let t_dist = prop_oneof![
        Just(Distribution::uniform(0.0, 1.0).unwrap()),
        (0.2..3.0f64).prop_map(|rate| Distribution::truncated_exponential(rate, 0.0, 1.0).unwrap()),
    ];
    (t_dist, 0.5..2.0f64, 0.1..0.9f64, 1..6usize, 1..6usize).prop_map(|(t_dist, exponent, share, n_q, n_t)| {
        let alpha = Alpha::Power { coef: 1.0, exponent };
        let r = share * alpha.value(2.0);
        let inst = ProblemInstance::new(
            Distribution::uniform(1.0, 2.0).unwrap(),
            t_dist,
            Valuation::linear(alpha),
            r,
        );
        (DiscreteInstance::from_instance(&inst, n_q, n_t).unwrap(), n_q, n_t)
    })
}

/// Every non-increasing vector of length `len` with entries in `0..=max`, by recursion.
fn all_monotone(len: usize, max: usize) -> Vec<Vec<usize>> {
    if len == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 0..=max {
        for mut rest in all_monotone(len - 1, first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enumeration_agrees_with_brute_force((dinst, n_q, n_t) in small_instance()) {
        let all = all_monotone(n_t, n_q);
        prop_assert_eq!(all.len() as u128, count_monotone(n_t, n_q));
        let mut best: Option<f64> = None;
        for k in all {
            let m = DiscreteMechanism::envelope(&dinst, k).unwrap();
            let e = evaluate_discrete(&dinst, &m).unwrap();
            if e.worst_original_violation <= DISCRETE_TOLERANCE {
                best = Some(best.map_or(e.revenue, |b: f64| b.max(e.revenue)));
            }
        }
        let found = enumerate_optimal(&dinst).unwrap();
        prop_assert_eq!(found.candidates, count_monotone(n_t, n_q));
        prop_assert!((found.best_revenue - best.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn dynamic_program_bounds_enumeration((dinst, _n_q, _n_t) in small_instance()) {
        let (k, dp) = optimize_monotone(&dinst);
        prop_assert!(k.windows(2).all(|w| w[1] <= w[0]));
        let found = enumerate_optimal(&dinst).unwrap();
        prop_assert!(found.best_revenue <= dp + 1e-12);
        let e = evaluate_discrete(&dinst, &DiscreteMechanism::envelope(&dinst, k).unwrap()).unwrap();
        if e.worst_original_violation <= DISCRETE_TOLERANCE {
            prop_assert!((found.best_revenue - dp).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_revenue_telescopes(
        (dinst, n_q, n_t) in small_instance(),
        seed in prop::collection::vec(0..6usize, 6),
    ) {
        let mut k: Vec<usize> = seed.into_iter().take(n_t).map(|x| x.min(n_q)).collect();
        k.resize(n_t, 0);
        k.sort_unstable_by(|a, b| b.cmp(a));
        let m = DiscreteMechanism::envelope(&dinst, k).unwrap();
        let e = evaluate_discrete(&dinst, &m).unwrap();
        prop_assert!((e.revenue - e.revenue_rewritten).abs() < 1e-12);
        prop_assert!(e.buyer_utilities[0].abs() < 1e-12);
    }
}

#[test]
fn uniform_grids_select_the_pointwise_rule() {
    for n in [4, 6, 8] {
        let dinst = DiscreteInstance::from_instance(&stock::uniform(), n, n).unwrap();
        assert!(dinst.virtuals_monotone_in_t());
        let found = enumerate_optimal(&dinst).unwrap();
        assert_eq!(found.best.threshold_index, dinst.pointwise_thresholds(), "n = {n}");
        assert!(found.best.is_monotone());
    }
}

#[test]
fn bump_density_breaks_discrete_monotonicity() {
    let dinst = DiscreteInstance::from_instance(&stock::decreasing_hazard(), 10, 20).unwrap();
    assert!(!dinst.virtuals_monotone_in_t());
    let k = dinst.pointwise_thresholds();
    assert!(k.windows(2).any(|w| w[1] > w[0]), "{k:?}");
    // The best monotone mechanism then earns less than the pointwise bound.
    let (_, dp) = optimize_monotone(&dinst);
    let pointwise: f64 = (0..dinst.n_t())
        .map(|j| {
            dinst.t_masses[j]
                * (k[j]..dinst.n_q())
                    .map(|i| dinst.q_masses[i] * dinst.virtuals[j][i])
                    .sum::<f64>()
        })
        .sum();
    assert!(dp < pointwise);
}

#[test]
fn bad_inputs_are_rejected() {
    let inst = stock::uniform();
    assert!(matches!(
        DiscreteInstance::from_instance(&inst, 0, 3),
        Err(OracleError::EmptyGrid { .. })
    ));
    let bad = DiscreteInstance::from_parts(vec![1.0], vec![0.5], vec![0.0], vec![1.0], |q, t| q * t, 0.5, None);
    assert!(matches!(bad, Err(OracleError::Masses { .. })));
    let dinst = DiscreteInstance::from_instance(&inst, 3, 3).unwrap();
    assert!(DiscreteMechanism::envelope(&dinst, vec![4, 0, 0]).is_err());
    let tight = Enumerator {
        limit: 10,
        ..Enumerator::default()
    };
    assert!(matches!(
        tight.enumerate_optimal(&dinst),
        Err(OracleError::TooLarge { count: 20, limit: 10 })
    ));
}

#[test]
fn no_trade_is_feasible_and_earns_nothing() {
    let dinst = DiscreteInstance::from_instance(&stock::uniform(), 5, 5).unwrap();
    let e = evaluate_discrete(&dinst, &DiscreteMechanism::no_trade(&dinst)).unwrap();
    assert_eq!(e.revenue, 0.0);
    assert_eq!(e.trade_probability, 0.0);
    assert!(e.worst_original_violation <= 0.0);
}
