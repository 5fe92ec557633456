use std::sync::Arc;

use nsfde::coupling::{cauchy_ladder, coupled_pair, nonexplosion_scan, sup_distance};
use nsfde::em_scheme::run;
use nsfde::history_path::segment_distance;
use nsfde::linalg::Matrix;
use nsfde::model::builtin::LinearParams;
use nsfde::stats::linear_fit;
use nsfde::{BrownianDriver, CouplingConfig, Error, InitialData, LinearNeutralModel, NeutralTerm, RunConfig};

fn constant(c: f64) -> Arc<InitialData<f64>> {
    Arc::new(InitialData::constant(vec![c], 1.0).unwrap())
}

fn linear(configure: impl FnOnce(&mut LinearParams<f64>)) -> LinearNeutralModel<f64> {
    let mut p = LinearParams::zeros(1, 1, 1.0);
    configure(&mut p);
    LinearNeutralModel::new(p).unwrap()
}

fn config(horizon: f64, radius: f64, fine: u32, paths: usize, seed: u64) -> CouplingConfig<f64> {
    CouplingConfig {
        run: RunConfig::new(fine, horizon, radius),
        fine,
        paths,
        seed,
        epsilons: vec![0.01, 0.1],
    }
}

#[test]
fn coarse_increments_are_sums_of_fine_ones() {
    let driver = BrownianDriver::new(5, 64, 2);
    let mut s = driver.stream::<f64>(3);
    let mut coarse = [0.0; 2];
    for j in 0..8 {
        s.increment(8, j, &mut coarse).unwrap();
        let mut expect = [0.0; 2];
        for k in 8 * j..8 * (j + 1) {
            let w = s.fine_increment(k).to_vec();
            expect[0] += w[0];
            expect[1] += w[1];
        }
        assert_eq!(coarse[0].to_bits(), expect[0].to_bits());
        assert_eq!(coarse[1].to_bits(), expect[1].to_bits());
    }
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let driver = BrownianDriver::new(9, 16, 1);
    let a: Vec<f64> = (0..16).map(|k| driver.stream::<f64>(0).fine_increment(k)[0]).collect();
    let mut s = driver.stream::<f64>(0);
    let b: Vec<f64> = (0..16).map(|k| s.fine_increment(k)[0]).collect();
    assert_eq!(a, b);
    let mut other = driver.stream::<f64>(1);
    assert_ne!(other.fine_increment(0)[0], a[0]);
}

#[test]
fn fine_increments_have_the_right_variance() {
    let driver = BrownianDriver::new(1, 256, 1);
    let mut s = driver.stream::<f64>(0);
    let n = 256 * 200;
    let var = (0..n).map(|k| s.fine_increment(k)[0].powi(2)).sum::<f64>() / n as f64;
    assert!((var * 256.0 - 1.0).abs() < 0.03, "{}", var * 256.0);
}

#[test]
fn incompatible_resolution_is_rejected() {
    let m = linear(|_| {});
    let cfg = config(1.0, 10.0, 16, 4, 0);
    assert!(matches!(
        coupled_pair(&m, constant(1.0), 16, 12, &cfg),
        Err(Error::ResolutionMismatch { resolution: 12, fine: 16 })
    ));
}

#[test]
fn identical_resolutions_have_zero_distance() {
    let m = linear(|p| {
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma0 = Matrix::scaled_identity(1, 1, 0.5);
    });
    let rep = coupled_pair(&m, constant(1.0), 16, 16, &config(1.0, 100.0, 16, 50, 2)).unwrap();
    assert!(rep.distances.iter().all(|d| d.sup_distance == 0.0));
    assert!(rep.exceedance.iter().all(|e| e.probability.successes == 0));
}

#[test]
fn union_grid_distance_matches_segment_scan() {
    let m = linear(|p| {
        p.neutral = NeutralTerm::PointDelay { kappa: 0.1 };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, 0.4);
    });
    let init = constant(1.0);
    let driver = BrownianDriver::new(4, 16, 1);
    let mut s = driver.stream::<f64>(0);
    let a = run(&m, init.clone(), &RunConfig::new(8, 1.0, 100.0), &mut s.level(8).unwrap()).unwrap();
    let b = run(&m, init, &RunConfig::new(16, 1.0, 100.0), &mut s.level(16).unwrap()).unwrap();
    let fast = sup_distance(&a.path, &b.path, 1.0, 1e-12).unwrap();
    let mut slow = 0.0f64;
    for &t in b.path.times() {
        let d = segment_distance(&a.path.segment(t).unwrap(), &b.path.segment(t).unwrap(), 1e-12).unwrap();
        slow = slow.max(d);
    }
    assert!(fast > 0.0);
    assert!((fast - slow).abs() <= 1e-10 * slow, "{fast} vs {slow}");
}

#[test]
fn deterministic_gap_shrinks_under_refinement() {
    let m = linear(|p| {
        p.neutral = NeutralTerm::PointDelay { kappa: 0.1 };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
    });
    let reps = cauchy_ladder(&m, constant(1.0), &[4, 8, 16, 32, 64], &config(2.0, 100.0, 64, 1, 0)).unwrap();
    let d: Vec<f64> = reps.iter().map(|r| r.distances[0].sup_distance).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
}

#[test]
fn classical_sde_converges_at_half_order() {
    let m = linear(|p| {
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, 0.5);
    });
    let levels = [16, 32, 64, 128, 256, 512];
    let reps = cauchy_ladder(&m, constant(1.0), &levels, &config(1.0, 1e3, 512, 200, 8)).unwrap();
    let xs: Vec<f64> = reps.iter().map(|r| (1.0 / r.n as f64).ln()).collect();
    // a grid sup of O(h^½) gaps carries a √(ln n) factor
    let ys: Vec<f64> = reps
        .iter()
        .map(|r| (r.median_distance / (r.n as f64).ln().sqrt()).ln())
        .collect();
    let (slope, _) = linear_fit(&xs, &ys);
    assert!((0.4..=0.6).contains(&slope), "order {slope}");
}

#[test]
fn frozen_model_never_stops() {
    let m = linear(|_| {});
    let table = nonexplosion_scan(&m, constant(1.0), 4, &[4.0, 8.0, 16.0], &config(2.0, 100.0, 4, 20, 0)).unwrap();
    assert!(table.rows.iter().all(|r| r.stopped.successes == 0));
    assert!(table.monotone);
}

#[test]
fn stopping_probability_falls_with_radius() {
    let m = linear(|p| {
        p.a = Matrix::scaled_identity(1, 1, 0.5);
        p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, 1.0);
    });
    let radii = [4.0, 8.0, 16.0, 32.0];
    let table = nonexplosion_scan(&m, constant(1.0), 16, &radii, &config(2.0, 32.0, 16, 2000, 5)).unwrap();
    assert!(table.monotone, "{:?}", table.rows);
    assert!(table.rows[0].stopped.successes > 0);
    assert!(table.rows.iter().all(|r| r.dominated), "{:?}", table.rows);
}

#[test]
fn nonexplosion_rejects_small_radius() {
    let m = linear(|_| {});
    assert!(nonexplosion_scan(&m, constant(1.0), 4, &[2.0, 8.0], &config(1.0, 100.0, 4, 2, 0)).is_err());
    assert!(nonexplosion_scan(&m, constant(1.0), 4, &[8.0, 4.0], &config(1.0, 100.0, 4, 2, 0)).is_err());
}

#[test]
fn harness_ignores_worker_count() {
    let m = linear(|p| {
        p.neutral = NeutralTerm::PointDelay { kappa: 0.1 };
        p.a = Matrix::scaled_identity(1, 1, -1.0);
        p.sigma0 = Matrix::scaled_identity(1, 1, 0.3);
        p.sigma1 = LinearParams::diagonal_multiplicative(1, 1, 0.3);
    });
    let cfg = config(1.0, 100.0, 32, 100, 3);
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| coupled_pair(&m, constant(1.0), 16, 32, &cfg).unwrap())
    };
    let (a, b) = (go(1), go(3));
    assert_eq!(a, b);
}
