//! Explicit moment and growth constants, and Monte Carlo checks against them.

use std::sync::Arc;

use serde::Serialize;

use crate::coupling::BrownianDriver;
use crate::em_scheme::{run, RunConfig, RunOutcome};
use crate::error::{Error, Result};
use crate::history_path::InitialData;
use crate::model::Model;
use crate::montecarlo::{fold_paths, map_paths};
use crate::scalar::{norm_sq, Scalar};
use crate::stats::{median, Proportion};

/// Constants of the second-moment bound
/// `E sup_{s≤t} |x(s)|² ≤ C₄ e^{C₅ t}` and of the growth ceiling `Ĉ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants<T> {
    pub k: T,
    pub l: T,
    pub r: T,
    pub horizon: T,
    /// `E‖ξ‖²_r`.
    pub xi_norm_sq: T,
    pub c4: T,
    pub c5: T,
    pub c_hat: T,
}

impl<T: Scalar> BoundConstants<T> {
    pub fn new(k: T, l: T, r: T, horizon: T, xi_norm_sq: T) -> Result<Self> {
        let two = T::lit(2.0);
        if !(k >= T::zero()) || two * k * k >= T::one() {
            return Err(Error::ContractionTooLarge { k: k.as_f64() });
        }
        for (name, v) in [("L", l), ("T", horizon), ("E‖ξ‖²", xi_norm_sq)] {
            if !(v >= T::zero() && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(r > T::zero() && r.is_finite()) {
            return Err(Error::InvalidConfig(format!("r must be positive, got {r}")));
        }
        let c5 = T::lit(292.0) * l;
        let one_k = T::one() + k;
        let bracket = (two * k * k + T::lit(4.0) * one_k * one_k + T::lit(146.0) * l / r) * xi_norm_sq + c5 * horizon;
        Ok(Self {
            k,
            l,
            r,
            horizon,
            xi_norm_sq,
            c4: bracket / (T::one() - two * k * k),
            c5,
            c_hat: T::lit(146.0) * l,
        })
    }

    /// `ln(C₄ e^{C₅ t})`, finite even when the envelope overflows.
    pub fn log_envelope(&self, t: T) -> T {
        self.c4.ln() + self.c5 * t
    }

    pub fn envelope(&self, t: T) -> T {
        self.c4 * (self.c5 * t).exp()
    }

    /// Informational constant `C₁(Lk) = 4r(1 + 3k²) + 3L`.
    pub fn c1_lk(&self) -> T {
        T::lit(4.0) * self.r * (T::one() + T::lit(3.0) * self.k * self.k) + T::lit(3.0) * self.l
    }

    /// Informational constant `C₂(Lk) = C₁(Lk) + 216L`.
    pub fn c2_lk(&self) -> T {
        self.c1_lk() + T::lit(216.0) * self.l
    }
}

/// Monte Carlo estimate of `E sup_{s≤t} |x(s)|²` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCurve {
    pub times: Vec<f64>,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `C₄ e^{C₅ t}` (may be `inf` in floating point).
    pub envelope: Vec<f64>,
    pub log_envelope: Vec<f64>,
    pub paths: usize,
    /// Relative standard error at the horizon.
    pub relative_stderr: f64,
    /// `estimate + 3·stderr ≤ envelope` at every grid time.
    pub pass: bool,
}

fn run_path<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: &Arc<InitialData<T>>,
    cfg: &RunConfig<T>,
    seed: u64,
    id: u64,
) -> Result<RunOutcome<T>> {
    let driver = BrownianDriver::new(seed, cfg.n, model.noise_dim());
    let mut stream = driver.stream::<T>(id);
    run(model, init.clone(), cfg, &mut stream.level(cfg.n)?)
}

pub fn moment_curve<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    cfg: &RunConfig<T>,
    constants: &BoundConstants<T>,
    paths: usize,
    seed: u64,
) -> Result<MomentCurve> {
    if paths == 0 {
        return Err(Error::InvalidConfig("path count must be positive".into()));
    }
    let steps = cfg.steps();
    let (sum, sq) = fold_paths(
        paths,
        || (vec![0.0f64; steps + 1], vec![0.0f64; steps + 1]),
        |acc, id| {
            let out = run_path(model, &init, cfg, seed, id)?;
            let mut sup = 0.0f64;
            for j in 0..=steps {
                sup = sup.max(norm_sq(out.absorbed_value(j)).as_f64());
                acc.0[j] += sup;
                acc.1[j] += sup * sup;
            }
            Ok(())
        },
        |a, b| {
            a.0.iter_mut().zip(b.0).for_each(|(x, y)| *x += y);
            a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
        },
    )?;
    let m = paths as f64;
    let mut curve = MomentCurve {
        times: Vec::with_capacity(steps + 1),
        estimate: Vec::with_capacity(steps + 1),
        stderr: Vec::with_capacity(steps + 1),
        envelope: Vec::with_capacity(steps + 1),
        log_envelope: Vec::with_capacity(steps + 1),
        paths,
        relative_stderr: 0.0,
        pass: true,
    };
    for j in 0..=steps {
        let t = T::from_count(j) / T::from_count(cfg.n as usize);
        let mean = sum[j] / m;
        let var = if paths > 1 {
            ((sq[j] - m * mean * mean) / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se = (var / m).sqrt();
        let log_env = constants.log_envelope(t).as_f64();
        let upper = mean + 3.0 * se;
        curve.pass &= upper <= 0.0 || upper.ln() <= log_env;
        curve.times.push(t.as_f64());
        curve.estimate.push(mean);
        curve.stderr.push(se);
        curve.envelope.push(constants.envelope(t).as_f64());
        curve.log_envelope.push(log_env);
    }
    let last = curve.estimate[steps];
    curve.relative_stderr = if last > 0.0 { curve.stderr[steps] / last } else { 0.0 };
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub window: usize,
    /// `(C₅ + ε)·m`, the log of the threshold on `sup |x|²`.
    pub log_threshold: f64,
    pub exceed: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub epsilon: f64,
    pub c_hat: f64,
    /// `Ĉ + ε/2`.
    pub ceiling: f64,
    pub windows: Vec<WindowRow>,
    /// Window exceedance frequencies are nonincreasing.
    pub windows_decay: bool,
    /// Per path `(1/T) ln|x(T)|`; `-inf` when `x(T) = 0`.
    #[serde(skip)]
    pub terminal_rates: Vec<f64>,
    /// Per path max of `(1/t) ln|x(t)|` over the final unit window.
    #[serde(skip)]
    pub final_window_rates: Vec<f64>,
    pub median_terminal_rate: f64,
    /// Fraction of paths with final-window rate at most the ceiling.
    pub fraction_below_ceiling: f64,
    pub pass: bool,
}

struct PathGrowth {
    window_log_sup: Vec<f64>,
    terminal: f64,
    final_max: f64,
}

/// Required fraction of paths under the growth ceiling.
pub const GROWTH_QUANTILE: f64 = 0.99;

pub fn growth_report<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    cfg: &RunConfig<T>,
    constants: &BoundConstants<T>,
    epsilon: f64,
    paths: usize,
    seed: u64,
) -> Result<GrowthReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidConfig(format!("growth epsilon must be positive, got {epsilon}")));
    }
    if paths == 0 {
        return Err(Error::InvalidConfig("path count must be positive".into()));
    }
    let steps = cfg.steps();
    let n = cfg.n as usize;
    let windows = steps / n;
    if windows < 8 {
        return Err(Error::InvalidConfig(format!(
            "growth report needs a horizon of at least 8 unit windows, got {}",
            cfg.horizon
        )));
    }
    let per_path = map_paths(paths, |id| {
        let out = run_path(model, &init, cfg, seed, id)?;
        let log_abs = |j: usize| 0.5 * norm_sq(out.absorbed_value(j)).as_f64().ln();
        let window_log_sup = (1..=windows)
            .map(|w| ((w - 1) * n..=w * n).map(|j| 2.0 * log_abs(j)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let time = |j: usize| j as f64 / n as f64;
        let final_max = ((windows - 1) * n..=windows * n)
            .filter(|&j| j > 0)
            .map(|j| log_abs(j) / time(j))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(PathGrowth {
            window_log_sup,
            terminal: log_abs(steps) / time(steps),
            final_max,
        })
    })?;
    let c5 = constants.c5.as_f64();
    let rows: Vec<WindowRow> = (0..windows)
        .map(|w| {
            let log_threshold = (c5 + epsilon) * (w + 1) as f64;
            let count = per_path.iter().filter(|p| p.window_log_sup[w] > log_threshold).count();
            WindowRow {
                window: w + 1,
                log_threshold,
                exceed: Proportion::wilson95(count, paths),
            }
        })
        .collect();
    let windows_decay = rows.windows(2).all(|w| w[1].exceed.estimate <= w[0].exceed.estimate);
    let c_hat = constants.c_hat.as_f64();
    let ceiling = c_hat + epsilon / 2.0;
    let terminal_rates: Vec<f64> = per_path.iter().map(|p| p.terminal).collect();
    let final_window_rates: Vec<f64> = per_path.iter().map(|p| p.final_max).collect();
    let below = final_window_rates.iter().filter(|&&x| x <= ceiling).count();
    let fraction_below_ceiling = below as f64 / paths as f64;
    Ok(GrowthReport {
        epsilon,
        c_hat,
        ceiling,
        windows_decay,
        windows: rows,
        median_terminal_rate: median(&terminal_rates),
        terminal_rates,
        final_window_rates,
        fraction_below_ceiling,
        pass: windows_decay && fraction_below_ceiling >= GROWTH_QUANTILE,
    })
}
