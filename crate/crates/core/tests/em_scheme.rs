use std::sync::Arc;

use nsfde::em_scheme::run;
use nsfde::linalg::Matrix;
use nsfde::model::builtin::LinearParams;
use nsfde::{
    EmState, Error, InitialData, LinearNeutralModel, Model, NeutralTerm, NoNoise, Result, RunConfig, SegmentView,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn constant(c: f64) -> Arc<InitialData<f64>> {
    Arc::new(InitialData::constant(vec![c], 1.0).unwrap())
}

fn linear(configure: impl FnOnce(&mut LinearParams<f64>)) -> LinearNeutralModel<f64> {
    let mut p = LinearParams::zeros(1, 1, 1.0);
    configure(&mut p);
    LinearNeutralModel::new(p).unwrap()
}

fn gaussian_noise(seed: u64, n: u32) -> impl FnMut(usize, &mut [f64]) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, (1.0 / n as f64).sqrt()).unwrap();
    move |_, out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = normal.sample(&mut rng));
        Ok(())
    }
}

/// `D(φ) = s·φ(0)` with `b ≡ drift`, `σ ≡ 0`.
struct PresentNeutral {
    s: f64,
    drift: f64,
}

impl Model<f64> for PresentNeutral {
    fn dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn decay(&self) -> f64 {
        1.0
    }
    fn contraction(&self) -> f64 {
        self.s.abs()
    }
    fn coercivity(&self) -> f64 {
        0.0
    }
    fn neutral(&self, seg: &SegmentView<'_, f64>, out: &mut [f64]) -> Result<()> {
        seg.present(out);
        out[0] *= self.s;
        Ok(())
    }
    fn drift(&self, _: &SegmentView<'_, f64>, out: &mut [f64]) -> Result<()> {
        out[0] = self.drift;
        Ok(())
    }
    fn diffusion(&self, _: &SegmentView<'_, f64>, out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        Ok(())
    }
}

/// Method-of-steps reference for `d/dt[x(t) - κx(t-1)] = -x(t)` with
/// `x ≡ c` on `(-∞, 0]`. Integrates `y = x - κx(·-1)` by RK4; the second
/// unit interval uses twice the step so the lagged values are grid samples.
fn method_of_steps(kappa: f64, c: f64, fine: usize) -> f64 {
    let h = 1.0 / fine as f64;
    let mut first = vec![c; fine + 1];
    let mut y = c - kappa * c;
    for i in 0..fine {
        let f = |y: f64| -(y + kappa * c);
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        first[i + 1] = y + kappa * c;
    }
    let h2 = 2.0 * h;
    for i in 0..fine / 2 {
        let lag = |k: usize| kappa * first[2 * i + k];
        let k1 = -(y + lag(0));
        let k2 = -(y + 0.5 * h2 * k1 + lag(1));
        let k3 = -(y + 0.5 * h2 * k2 + lag(1));
        let k4 = -(y + h2 * k3 + lag(2));
        y += h2 / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y + kappa * first[fine]
}

fn delay_ode_model(kappa: f64) -> LinearNeutralModel<f64> {
    linear(|p| {
        p.neutral = NeutralTerm::PointDelay { kappa };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
    })
}

#[test]
fn reference_matches_closed_form() {
    let (kappa, c) = (0.1, 1.0);
    let exact = c * ((-2.0f64).exp() - kappa * (-1.0f64).exp());
    assert!((method_of_steps(kappa, c, 1 << 12) - exact).abs() < 1e-10);
}

#[test]
fn frozen_dynamics_stay_put() {
    let m = linear(|_| {});
    let out = run(&m, constant(1.5), &RunConfig::new(8, 2.0, 10.0), &mut NoNoise).unwrap();
    assert_eq!(out.path.len(), 17);
    assert!(out.path.times().iter().enumerate().all(|(j, _)| out.path.value(j) == [1.5]));
}

#[test]
fn constant_drift_is_exact_euler() {
    let a = 0.75;
    let m = linear(|p| p.offset = vec![a]);
    let out = run(&m, constant(0.5), &RunConfig::new(16, 1.0, 100.0), &mut NoNoise).unwrap();
    for j in 0..out.path.len() {
        let t = out.path.time(j);
        assert!((out.path.value(j)[0] - (0.5 + a * t)).abs() < 1e-13);
    }
}

#[test]
fn present_neutral_fixed_point_doubles() {
    let c = 0.3;
    let n = 4;
    let m = PresentNeutral { s: 0.5, drift: c * n as f64 };
    let mut state = EmState::new(&m, constant(0.0), &RunConfig::new(n, 1.0, 10.0)).unwrap();
    let fp = state.step(&m, &[0.0]).unwrap();
    assert!((state.gamma()[0] - c).abs() < 1e-15);
    let x = state.path().last_value()[0];
    assert!((x - 2.0 * c).abs() < 1e-11, "{x}");
    assert!(fp.residual <= 1e-12 * (1.0 + x.abs()));
    assert!((30..=50).contains(&fp.iterations), "{}", fp.iterations);
}

#[test]
fn expansive_neutral_diverges() {
    let m = PresentNeutral { s: 1.5, drift: 1.0 };
    let mut state = EmState::new(&m, constant(0.0), &RunConfig::new(4, 1.0, 10.0)).unwrap();
    assert!(matches!(state.step(&m, &[0.0]), Err(Error::FixedPointDivergence { .. })));
}

#[test]
fn neutral_delay_ode_matches_method_of_steps() {
    let (kappa, c) = (0.1, 1.0);
    let reference = method_of_steps(kappa, c, 1 << 12);
    let m = delay_ode_model(kappa);
    let mut errs = Vec::new();
    for n in [16u32, 32, 64, 128, 256, 512] {
        let out = run(&m, constant(c), &RunConfig::new(n, 2.0, 100.0), &mut NoNoise).unwrap();
        let err = (out.path.last_value()[0] - reference).abs();
        assert!(err <= 1.0 / n as f64, "n = {n}: {err}");
        errs.push(((1.0 / n as f64).ln(), err.ln()));
    }
    let mx = errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64;
    let my = errs.iter().map(|e| e.1).sum::<f64>() / errs.len() as f64;
    let slope = errs.iter().map(|e| (e.0 - mx) * (e.1 - my)).sum::<f64>()
        / errs.iter().map(|e| (e.0 - mx).powi(2)).sum::<f64>();
    assert!(slope >= 0.9, "order {slope}");
}

fn stochastic_point_delay() -> LinearNeutralModel<f64> {
    linear(|p| {
        p.neutral = NeutralTerm::PointDelay { kappa: 0.1 };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.b_delay = Matrix::scaled_identity(1, 1, 0.5);
        p.sigma0 = Matrix::scaled_identity(1, 1, 0.2);
        p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, 0.3);
    })
}

#[test]
fn gamma_stays_consistent() {
    let m = stochastic_point_delay();
    let cfg = RunConfig::new(64, 2.0, 100.0);
    let mut state = EmState::new(&m, constant(1.0), &cfg).unwrap();
    let mut noise = gaussian_noise(7, cfg.n);
    let mut dw = [0.0];
    for j in 0..cfg.steps() {
        noise(j, &mut dw).unwrap();
        state.step(&m, &dw).unwrap();
        let x = state.path().last_value()[0];
        assert!(state.gamma_defect(&m).unwrap() <= 2e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn runs_are_deterministic() {
    let m = stochastic_point_delay();
    let cfg = RunConfig::new(32, 2.0, 100.0);
    let a = run(&m, constant(1.0), &cfg, &mut gaussian_noise(3, 32)).unwrap();
    let b = run(&m, constant(1.0), &cfg, &mut gaussian_noise(3, 32)).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.path.times(), b.path.times());
}

#[test]
fn localization_holds_along_stochastic_paths() {
    let m = stochastic_point_delay();
    let cfg = RunConfig::new(256, 2.0, 100.0);
    for seed in 0..5 {
        let out = run(&m, constant(1.0), &cfg, &mut gaussian_noise(seed, cfg.n)).unwrap();
        assert_eq!(out.loc1_violations(), 0);
        assert_eq!(out.loc2_violations(), 0);
        assert_eq!(out.drift_within_bound(), Some(true));
    }
}

#[test]
fn frozen_segment_branches() {
    let m = linear(|p| p.offset = vec![1.0]);
    let cfg = RunConfig::new(4, 1.0, 100.0);
    let mut state = EmState::new(&m, constant(0.0), &cfg).unwrap();
    state.step(&m, &[0.0]).unwrap();
    state.step(&m, &[0.0]).unwrap();
    // frontier at 0.5; t = 0.6 freezes at t_n = 0.5
    let seg = state.frozen_segment(0.6).unwrap();
    assert_eq!(seg.cap(), 0.5);
    assert!((seg.eval_vec(-0.3)[0] - 0.3).abs() < 1e-15);
    assert_eq!(seg.eval_vec(0.0)[0], 0.5);
    let grid = state.frozen_segment(0.5).unwrap();
    assert_eq!(grid.cap(), 0.5);
    assert_eq!(grid.eval_vec(0.0)[0], 0.5);
    assert!(state.frozen_segment(0.75).is_err());
}

#[test]
fn frozen_segment_of_constant_path_is_plain() {
    let m = linear(|_| {});
    let mut state = EmState::new(&m, constant(2.0), &RunConfig::new(4, 1.0, 100.0)).unwrap();
    state.step(&m, &[0.0]).unwrap();
    let frozen = state.frozen_segment(0.3).unwrap();
    let plain = state.path().segment(0.25).unwrap();
    assert_eq!(frozen.fading_norm(1e-12).unwrap(), plain.fading_norm(1e-12).unwrap());
    assert_eq!(state.displacement(0.25).unwrap(), 0.0);
}

#[test]
fn displacement_of_constant_drift() {
    let a = -0.8;
    let n = 8;
    let m = linear(|p| p.offset = vec![a]);
    let mut state = EmState::new(&m, constant(1.0), &RunConfig::new(n, 1.0, 100.0)).unwrap();
    for _ in 0..3 {
        state.step(&m, &[0.0]).unwrap();
    }
    let h = 1.0 / n as f64;
    for j in 0..3 {
        let tj = j as f64 * h;
        assert_eq!(state.displacement(tj).unwrap(), 0.0);
        let p = state.displacement(tj + h / 2.0).unwrap();
        assert!((p - a.abs() * h / 2.0).abs() < 1e-12, "{p}");
    }
}

#[test]
fn mean_square_displacement_shrinks() {
    let m = stochastic_point_delay();
    let mut points = Vec::new();
    for n in [16u32, 32, 64, 128] {
        let cfg = RunConfig::new(n, 1.0, 1e3);
        let paths = 200;
        let mut total = 0.0;
        for seed in 0..paths {
            let out = run(&m, constant(1.0), &cfg, &mut gaussian_noise(seed, n)).unwrap();
            let worst = out.records.iter().map(|r| r.displacement).fold(0.0, f64::max);
            total += worst * worst;
        }
        points.push(((n as f64).ln(), (total / paths as f64).ln()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = points.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!(slope < 0.0, "{slope}");
}

#[test]
fn config_rejects_coarse_grid_and_small_radius() {
    let m = linear(|p| p.r = 3.0);
    let init = Arc::new(InitialData::constant(vec![1.0], 3.0).unwrap());
    assert!(matches!(
        EmState::new(&m, init.clone(), &RunConfig::new(4, 1.0, 10.0)),
        Err(Error::InvalidConfig(_))
    ));
    assert!(EmState::new(&m, init.clone(), &RunConfig::new(5, 1.0, 10.0)).is_ok());
    assert!(matches!(
        EmState::new(&m, init, &RunConfig::new(8, 1.0, 3.0)),
        Err(Error::InvalidConfig(_))
    ));
}

#[test]
fn halted_state_refuses_to_step() {
    let m = linear(|p| p.offset = vec![10.0]);
    let mut cfg = RunConfig::new(4, 4.0, 4.0);
    cfg.halt_on_stop = true;
    let out = run(&m, constant(1.0), &cfg, &mut NoNoise).unwrap();
    assert!(out.halted());
    assert_eq!(out.monitor.tau_step, Some(1));
    assert_eq!(out.absorbed_value(10), out.path.last_value());

    let mut state = EmState::new(&m, constant(1.0), &cfg).unwrap();
    state.step(&m, &[0.0]).unwrap();
    assert!(matches!(state.step(&m, &[0.0]), Err(Error::StoppedState { .. })));
}

#[test]
fn fading_average_neutral_steps() {
    let m = linear(|p| {
        p.neutral = NeutralTerm::FadingAverage { kappa: 0.5, rate: 2.0 };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma0 = Matrix::scaled_identity(1, 1, 0.3);
    });
    let cfg = RunConfig::new(64, 1.0, 100.0);
    let mut state = EmState::new(&m, constant(1.0), &cfg).unwrap();
    let mut noise = gaussian_noise(11, cfg.n);
    let mut dw = [0.0];
    for j in 0..cfg.steps() {
        noise(j, &mut dw).unwrap();
        let fp = state.step(&m, &dw).unwrap();
        assert!(fp.iterations < 60);
        let x = state.path().last_value()[0];
        assert!(state.gamma_defect(&m).unwrap() <= 2e-12 * (1.0 + x.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn invariants_hold_for_random_linear_models(
        kappa in -0.3f64..0.3,
        a in -2.0f64..1.0,
        b in -1.0f64..1.0,
        s0 in 0.0f64..1.0,
        s1 in 0.0f64..0.8,
        x0 in -2.0f64..2.0,
        seed in 0u64..1000,
    ) {
        let m = linear(|p| {
            p.neutral = NeutralTerm::PointDelay { kappa };
            p.a = Matrix::scaled_identity(1, 1, a);
            p.b_delay = Matrix::scaled_identity(1, 1, b);
            p.sigma0 = Matrix::scaled_identity(1, 1, s0);
            p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, s1);
        });
        let cfg = RunConfig::new(32, 2.0, 1e4);
        let mut state = EmState::new(&m, constant(x0), &cfg).unwrap();
        let mut noise = gaussian_noise(seed, cfg.n);
        let mut dw = [0.0];
        for j in 0..cfg.steps() {
            noise(j, &mut dw).unwrap();
            state.step(&m, &dw).unwrap();
            let x = state.path().last_value()[0];
            prop_assert!(state.gamma_defect(&m).unwrap() <= 2e-12 * (1.0 + x.abs()));
        }
        let out = run(&m, constant(x0), &cfg, &mut gaussian_noise(seed, cfg.n)).unwrap();
        prop_assert_eq!(out.loc1_violations(), 0);
        prop_assert_eq!(out.loc2_violations(), 0);
    }
}

#[test]
fn single_precision_run() {
    let mut p = LinearParams::<f32>::zeros(1, 1, 1.0);
    p.neutral = NeutralTerm::PointDelay { kappa: 0.1 };
    p.a = Matrix::scaled_identity(1, 1, -1.0);
    let m = LinearNeutralModel::new(p).unwrap();
    let init = Arc::new(InitialData::constant(vec![1.0f32], 1.0).unwrap());
    let mut cfg = RunConfig::<f32>::new(64, 2.0, 100.0);
    cfg.norm_tol = 1e-5;
    cfg.eps_fix = 1e-6;
    let out = run(&m, init, &cfg, &mut NoNoise).unwrap();
    let exact = (-2.0f32).exp() - 0.1 * (-1.0f32).exp();
    assert!((out.path.last_value()[0] - exact).abs() < 2.0 / 64.0);
    assert_eq!(out.loc1_violations() + out.loc2_violations(), 0);
}
