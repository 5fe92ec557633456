use std::sync::Arc;

use nsfde::estimates::{growth_report, moment_curve};
use nsfde::linalg::Matrix;
use nsfde::model::builtin::LinearParams;
use nsfde::{BoundConstants, Error, InitialData, LinearNeutralModel, Model, RunConfig};
use proptest::prelude::*;

fn constant(c: f64) -> Arc<InitialData<f64>> {
    Arc::new(InitialData::constant(vec![c], 1.0).unwrap())
}

fn linear(configure: impl FnOnce(&mut LinearParams<f64>)) -> LinearNeutralModel<f64> {
    let mut p = LinearParams::zeros(1, 1, 1.0);
    configure(&mut p);
    LinearNeutralModel::new(p).unwrap()
}

#[test]
fn constants_for_neutral_free_case() {
    let c = BoundConstants::new(0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
    assert_eq!(c.c5, 292.0);
    assert_eq!(c.c_hat, 146.0);
    assert_eq!(c.c4, 442.0);
}

#[test]
fn constants_with_contraction() {
    let c = BoundConstants::<f64>::new(0.5, 1.0, 1.0, 2.0, 0.0).unwrap();
    assert!((c.c4 - 1168.0).abs() < 1e-12);
}

#[test]
fn zero_coercivity_gives_flat_envelope() {
    let c = BoundConstants::new(0.2, 0.0, 1.0, 3.0, 2.0).unwrap();
    assert_eq!(c.c5, 0.0);
    assert_eq!(c.envelope(0.0), c.envelope(3.0));
}

#[test]
fn large_contraction_is_rejected() {
    assert!(matches!(
        BoundConstants::new(0.71, 1.0, 1.0, 1.0, 1.0),
        Err(Error::ContractionTooLarge { .. })
    ));
}

#[test]
fn informational_constants() {
    let c = BoundConstants::new(0.5, 1.0, 2.0, 1.0, 1.0).unwrap();
    assert_eq!(c.c1_lk(), 4.0 * 2.0 * 1.75 + 3.0);
    assert_eq!(c.c2_lk(), c.c1_lk() + 216.0);
}

#[test]
fn log_envelope_survives_overflow() {
    let c = BoundConstants::<f64>::new(0.0, 10.0, 1.0, 1.0, 1.0).unwrap();
    assert!(c.envelope(1.0).is_infinite());
    assert!((c.log_envelope(1.0) - (c.c4.ln() + 2920.0)).abs() < 1e-9);
}

proptest! {
    #[test]
    fn c4_is_monotone(k in 0.0f64..0.7, l in 0.0f64..5.0, t in 0.0f64..5.0, xi in 0.0f64..5.0, dk in 0.0f64..0.005, dl in 0.0f64..1.0) {
        let base = BoundConstants::new(k, l, 1.0, t, xi).unwrap();
        prop_assert!((base.c5 / base.c_hat - 2.0).abs() < 1e-15 || l == 0.0);
        for other in [
            BoundConstants::new((k + dk).min(0.707), l, 1.0, t, xi).unwrap(),
            BoundConstants::new(k, l + dl, 1.0, t, xi).unwrap(),
            BoundConstants::new(k, l, 1.0, t + dl, xi).unwrap(),
            BoundConstants::new(k, l, 1.0, t, xi + dl).unwrap(),
        ] {
            prop_assert!(other.c4 >= base.c4);
        }
    }
}

#[test]
fn frozen_model_curve_is_flat() {
    let m = linear(|_| {});
    let c = BoundConstants::new(0.0, 1.0, 1.0, 1.0, 4.0).unwrap();
    let curve = moment_curve(&m, constant(2.0), &RunConfig::new(8, 1.0, 10.0), &c, 20, 0).unwrap();
    assert!(curve.estimate.iter().all(|&e| e == 4.0));
    assert!(curve.stderr.iter().all(|&s| s == 0.0));
    assert!(c.c4 >= 16.0);
    assert!(curve.pass);
}

#[test]
fn ornstein_uhlenbeck_curve_dominates_second_moment() {
    let sigma = 0.8;
    let m = linear(|p| {
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma0 = Matrix::scaled_identity(1, 1, sigma);
    });
    let c = BoundConstants::new(0.0, m.coercivity(), 1.0, 2.0, 1.0).unwrap();
    let cfg = RunConfig::new(64, 2.0, 1e3);
    let curve = moment_curve(&m, constant(1.0), &cfg, &c, 2000, 4).unwrap();
    assert!(curve.pass);
    assert!(curve.estimate.windows(2).all(|w| w[1] >= w[0]));
    for (i, &t) in curve.times.iter().enumerate() {
        let second = (-2.0 * t).exp() + sigma * sigma / 2.0 * (1.0 - (-2.0 * t).exp());
        assert!(curve.estimate[i] + 3.0 * curve.stderr[i] >= second, "t = {t}");
    }
}

#[test]
fn deterministic_growth_rate() {
    let a = 0.5;
    let m = linear(|p| p.a = Matrix::scaled_identity(1, 1, a));
    assert_eq!(m.coercivity(), 2.0 * a);
    let c = BoundConstants::new(0.0, m.coercivity(), 1.0, 16.0, 1.0).unwrap();
    let cfg = RunConfig::new(256, 16.0, 1e6);
    let rep = growth_report(&m, constant(1.0), &cfg, &c, 0.5, 1, 0).unwrap();
    assert!((rep.terminal_rates[0] - a).abs() <= 0.02 * a, "{}", rep.terminal_rates[0]);
    assert!(rep.terminal_rates[0] <= 146.0 * 2.0 * a);
    assert!(rep.pass);
}

#[test]
fn frozen_model_has_zero_growth() {
    let m = linear(|_| {});
    let c = BoundConstants::new(0.0, 0.1, 1.0, 8.0, 1.0).unwrap();
    let rep = growth_report(&m, constant(1.0), &RunConfig::new(2, 8.0, 10.0), &c, 0.5, 3, 0).unwrap();
    assert!(rep.terminal_rates.iter().all(|&r| r == 0.0));
    assert!(rep.pass);
}

#[test]
fn growth_needs_eight_windows() {
    let m = linear(|_| {});
    let c = BoundConstants::new(0.0, 0.1, 1.0, 4.0, 1.0).unwrap();
    assert!(growth_report(&m, constant(1.0), &RunConfig::new(2, 4.0, 10.0), &c, 0.5, 3, 0).is_err());
}

#[test]
fn ornstein_uhlenbeck_rates_are_nonpositive() {
    let m = linear(|p| {
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma0 = Matrix::scaled_identity(1, 1, 0.5);
    });
    let c = BoundConstants::new(0.0, m.coercivity(), 1.0, 16.0, 1.0).unwrap();
    let rep = growth_report(&m, constant(1.0), &RunConfig::new(8, 16.0, 1e3), &c, 0.5, 300, 1).unwrap();
    assert!(rep.median_terminal_rate <= 0.0);
    assert!(rep.pass, "{rep:?}");
}
