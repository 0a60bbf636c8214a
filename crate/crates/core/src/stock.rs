//! Reference instances used by tests, the acceptance suite and the CLI.
//!
//! Unless noted, quality is uniform on `[1, 2]`, the buyer type is uniform on
//! `[0, 1]`, `v(q, t) = q t` and the reserve is 0.5.

use crate::dist::Distribution;
use crate::model::{Alpha, ProblemInstance, Valuation};

fn quality() -> Distribution {
    Distribution::uniform(1.0, 2.0).expect("valid support")
}

fn identity() -> Valuation {
    Valuation::linear(Alpha::Power {
        coef: 1.0,
        exponent: 1.0,
    })
}

pub fn uniform() -> ProblemInstance {
    ProblemInstance::new(quality(), Distribution::uniform(0.0, 1.0).unwrap(), identity(), 0.5)
}

/// Buyer type exponential with rate 1 truncated to `[0, 1]`.
pub fn truncated_exponential() -> ProblemInstance {
    ProblemInstance::new(
        quality(),
        Distribution::truncated_exponential(1.0, 0.0, 1.0).unwrap(),
        identity(),
        0.5,
    )
}

/// Buyer type normal(0.5, 0.2) truncated to `[0, 1]`.
pub fn truncated_normal() -> ProblemInstance {
    ProblemInstance::new(
        quality(),
        Distribution::truncated_normal(0.5, 0.2, 0.0, 1.0).unwrap(),
        identity(),
        0.5,
    )
}

/// `v(q, t) = q^2 t`.
pub fn alpha_squared() -> ProblemInstance {
    ProblemInstance::new(
        quality(),
        Distribution::uniform(0.0, 1.0).unwrap(),
        Valuation::linear(Alpha::Power {
            coef: 1.0,
            exponent: 2.0,
        }),
        0.5,
    )
}

/// `v(q, t) = q t` given as a general polynomial valuation.
pub fn general_qt() -> ProblemInstance {
    ProblemInstance::new(
        quality(),
        Distribution::uniform(0.0, 1.0).unwrap(),
        Valuation::polynomial(&[(1.0, 1, 1)]),
        0.5,
    )
}

/// Buyer density with a tall bump on `[0.5, 0.6]`: the hazard rate falls
/// right after the bump, so the monotone hazard rate condition fails.
pub fn decreasing_hazard() -> ProblemInstance {
    ProblemInstance::new(
        quality(),
        Distribution::piecewise_linear(vec![
            [0.0, 1.0],
            [0.5, 1.0],
            [0.51, 8.0],
            [0.59, 8.0],
            [0.6, 0.2],
            [1.0, 0.2],
        ])
        .unwrap(),
        identity(),
        0.5,
    )
}

/// The five instances every structural claim is checked on.
pub fn all() -> Vec<(&'static str, ProblemInstance)> {
    vec![
        ("uniform", uniform()),
        ("truncated_exponential", truncated_exponential()),
        ("truncated_normal", truncated_normal()),
        ("alpha_squared", alpha_squared()),
        ("general_qt", general_qt()),
    ]
}

pub fn by_name(name: &str) -> Option<ProblemInstance> {
    match name {
        "decreasing_hazard" => Some(decreasing_hazard()),
        _ => all().into_iter().find(|(n, _)| *n == name).map(|(_, i)| i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_instances_validate() {
        for (name, inst) in all() {
            let r = inst.validate();
            assert!(r.passed(), "{name}: {:?}", r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn bump_breaks_mhr_only() {
        let r = decreasing_hazard().validate();
        let failed: Vec<_> = r.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, vec![crate::model::CHECK_MHR]);
    }

    #[test]
    fn lookup() {
        assert!(by_name("uniform").is_some());
        assert!(by_name("decreasing_hazard").is_some());
        assert!(by_name("nope").is_none());
    }
}
