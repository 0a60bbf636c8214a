use mediation::mechanism::{Adjusted, FnMechanism};
use mediation::solver::{buyer_utility, solve};
use mediation::stock;
use mediation::verify::*;

#[test]
fn solver_output_is_feasible_and_structured() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let v = Verifier::new(101, 101, DEFAULT_TOLERANCE);
    let report = v.verify(&inst, &mech);
    assert!(report.feasible, "{}", report.to_table());
    assert!(report.worst_violation() <= 1e-7);
    let s = v.check_structure(&inst, &mech, mech.t1(), mech.t2());
    assert!(s.passed);
    assert!(s.max_pay_slope_between_cutoffs.unwrap() < STRICT_SLOPE);
    assert_eq!(s.check(SELLER_ZERO).unwrap().worst_violation, 0.0);
}

#[test]
fn lower_threshold_breaks_ir_and_signal_one_obedience() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let shifted = Adjusted::new(&mech, inst.q_lo(), inst.q_hi()).shift_threshold(-0.2);
    let report = Verifier::new(101, 101, DEFAULT_TOLERANCE).verify(&inst, &shifted);
    assert!(!report.feasible);
    for name in [IR_BUYER, OBEDIENCE_BUY, TRUTH_FULL] {
        assert!(report.result(name).unwrap().worst_violation > 1e-3, "{name}");
    }
    // Recommending more low qualities only lowers the signal-0 posterior.
    assert!(report.result(OBEDIENCE_NOT_BUY).unwrap().passed);
}

#[test]
fn higher_threshold_breaks_signal_zero_obedience() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let shifted = Adjusted::new(&mech, inst.q_lo(), inst.q_hi()).shift_threshold(0.2);
    let report = Verifier::new(101, 101, DEFAULT_TOLERANCE).verify(&inst, &shifted);
    let r = report.result(OBEDIENCE_NOT_BUY).unwrap();
    assert!(r.worst_violation > 1e-3, "{}", report.to_table());
    assert!(matches!(r.location, Location::Type { .. }));
}

#[test]
fn flat_payment_fails_ir_for_low_types() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let top = inst.value(inst.q_hi(), inst.t_hi());
    let flat = FnMechanism::new(move |t| mech.lambda(t), move |_| top, |_| 0.5);
    let report = Verifier::new(101, 101, DEFAULT_TOLERANCE).verify(&inst, &flat);
    let ir = report.result(IR_BUYER).unwrap();
    assert!(!ir.passed);
    match ir.location {
        Location::Type { t } => assert!(t < 1.0),
        other => panic!("unexpected location {other:?}"),
    }
}

#[test]
fn seller_overpayment_is_reported_exactly() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let over = Adjusted::new(&mech, inst.q_lo(), inst.q_hi()).shift_seller_payment(0.01);
    let report = Verifier::new(51, 51, DEFAULT_TOLERANCE).verify(&inst, &over);
    let c = report.result(OBEDIENCE_SELLER).unwrap();
    assert!((c.worst_violation - 0.01).abs() < 1e-12);
}

#[test]
fn violations_grow_under_refinement() {
    let inst = stock::truncated_normal();
    let mech = solve(&inst).unwrap();
    for shift in [-0.2, 0.2] {
        let bad = Adjusted::new(&mech, inst.q_lo(), inst.q_hi()).shift_threshold(shift);
        let mut n = 11;
        let mut prev = Verifier::new(n, n, DEFAULT_TOLERANCE).verify(&inst, &bad);
        while n < 161 {
            n = 2 * n - 1;
            let next = Verifier::new(n, n, DEFAULT_TOLERANCE).verify(&inst, &bad);
            for (a, b) in prev.constraint_results.iter().zip(&next.constraint_results) {
                assert_eq!(a.name, b.name);
                assert!(b.worst_violation >= a.worst_violation - 1e-12, "{} at n = {n}", a.name);
                if !a.passed {
                    assert!(!b.passed, "{} at n = {n}", a.name);
                }
            }
            prev = next;
        }
    }
}

#[test]
fn cheapest_report_is_the_top_type() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let cheapest = mech.buyer_pay(inst.t_hi());
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        assert!(mech.buyer_pay(t) >= cheapest - 1e-12);
        let prior = inst.prior_value(t).unwrap();
        assert!(buyer_utility(&inst, &mech, t) >= prior - cheapest - 1e-9, "t = {t}");
    }
}

#[test]
fn constant_low_threshold_has_vacuous_strict_interval() {
    let inst = stock::uniform();
    let always = FnMechanism::new(|_| 1.0, |t| 1.5 * t, |_| 0.5);
    let s = Verifier::new(51, 51, DEFAULT_TOLERANCE).check_structure(&inst, &always, inst.t_lo(), inst.t_lo());
    assert!(s.check(LAMBDA_MONOTONE).unwrap().passed);
    assert!(s.check(PAY_STRICT).unwrap().passed);
    assert_eq!(s.max_pay_slope_between_cutoffs, None);
    // t -> 1.5 t rises, so the payment monotonicity check catches it
    assert!(!s.check(PAY_MONOTONE).unwrap().passed);
}

#[test]
fn zero_tolerance_fails_on_quadrature_noise_only() {
    let inst = stock::truncated_exponential();
    let mech = solve(&inst).unwrap();
    let report = Verifier::new(51, 51, 0.0).verify(&inst, &mech);
    assert!(report.worst_violation() < 1e-10);
}

#[test]
fn report_round_trips_through_json() {
    let inst = stock::uniform();
    let mech = solve(&inst).unwrap();
    let report = Verifier::new(21, 21, DEFAULT_TOLERANCE).verify(&inst, &mech);
    let text = serde_json::to_string(&report).unwrap();
    let back: VerificationReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}
