use mediation::dist::Distribution;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.0..1.0f64, 0.1..2.0f64).prop_map(|(lo, w)| Distribution::uniform(lo, lo + w).unwrap()),
        (0.1..4.0f64).prop_map(|rate| Distribution::truncated_exponential(rate, 0.0, 1.0).unwrap()),
        (0.2..0.8f64, 0.1..0.5f64).prop_map(|(mu, s)| Distribution::truncated_normal(mu, s, 0.0, 1.0).unwrap()),
        (0.5..3.0f64, 0.5..3.0f64).prop_map(|(a, b)| Distribution::piecewise_linear(vec![
            [0.0, a],
            [0.4, b],
            [1.0, a]
        ])
        .unwrap()),
    ]
}

proptest! {
    #[test]
    fn quantile_inverts_cdf(d in family(), u in 0.001..0.999f64) {
        let x = d.quantile(u);
        prop_assert!(d.contains(x));
        prop_assert!((d.cdf(x) - u).abs() < 1e-9, "cdf(quantile({u})) = {}", d.cdf(x));
    }

    #[test]
    fn cdf_and_sf_complement(d in family(), s in 0.0..1.0f64) {
        let x = d.lo() + s * d.width();
        prop_assert!((d.cdf(x) + d.sf(x) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hazard_times_inverse_hazard_is_one(d in family(), s in 0.0..0.95f64) {
        let x = d.lo() + s * d.width();
        let h = d.hazard(x).unwrap();
        let ih = d.inverse_hazard(x).unwrap();
        prop_assert!((h * ih - 1.0).abs() < 1e-9);
    }

    #[test]
    fn density_integrates_to_cdf(d in family(), s in 0.05..1.0f64) {
        let x = d.lo() + s * d.width();
        let n = 2000;
        let h = (x - d.lo()) / n as f64;
        let trapezoid: f64 = (0..n)
            .map(|i| 0.5 * h * (d.density(d.lo() + i as f64 * h) + d.density(d.lo() + (i + 1) as f64 * h)))
            .sum();
        prop_assert!((trapezoid - d.cdf(x)).abs() < 1e-5);
    }
}

#[test]
fn uniform_hazard_closed_form() {
    let d = Distribution::uniform(0.0, 1.0).unwrap();
    for x in [0.0, 0.25, 0.5, 0.9] {
        assert!((d.inverse_hazard(x).unwrap() - (1.0 - x)).abs() < 1e-15);
    }
}

#[test]
fn truncated_exponential_inverse_hazard() {
    // ih(x) = (1 - e^{-(1-x)}) for rate 1 on [0, 1]
    let d = Distribution::truncated_exponential(1.0, 0.0, 1.0).unwrap();
    for x in [0.0, 0.3, 0.7] {
        let want: f64 = 1.0 - (x - 1.0_f64).exp();
        assert!((d.inverse_hazard(x).unwrap() - want).abs() < 1e-12, "x = {x}");
    }
}

#[test]
fn stock_type_distributions_are_mhr() {
    for (name, inst) in mediation::stock::all() {
        assert!(inst.t_dist.check_mhr(1024).holds, "{name}");
    }
    assert!(!mediation::stock::decreasing_hazard().t_dist.check_mhr(1024).holds);
}
