//! Euler–Maruyama scheme with frozen segments, an implicit neutral step and
//! stopping-time monitoring.
//!
//! On the grid `t_j = j/n` the scheme reads
//!
//! ```text
//! Γ(t_{j+1}) = Γ(t_j) + b(x_{t_j}) h + σ(x_{t_j}) Δw_j,
//! x(t_{j+1}) = D(x_{t_{j+1}}) + Γ(t_{j+1}),
//! ```
//!
//! with `Γ = x - D(x̂)`. The second line is solved by Picard iteration on the
//! newest sample.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::history_path::norm::linear_cell_sup;
use crate::history_path::{HistoryPath, InitialData, SegmentView};
use crate::model::Model;
use crate::scalar::{dist, norm, Scalar};

/// Relative slack for the localization checks, which compare two computed
/// norms.
pub const LOCALIZATION_SLACK: f64 = 1e-9;

/// Supplies the Brownian increment over `[t_j, t_{j+1}]` for step `j`.
pub trait NoiseSource<T> {
    fn increment(&mut self, step: usize, out: &mut [T]) -> Result<()>;
}

impl<T, F: FnMut(usize, &mut [T]) -> Result<()>> NoiseSource<T> for F {
    fn increment(&mut self, step: usize, out: &mut [T]) -> Result<()> {
        self(step, out)
    }
}

/// Zero increments, for deterministic runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoNoise;

impl<T: Scalar> NoiseSource<T> for NoNoise {
    fn increment(&mut self, _step: usize, out: &mut [T]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = T::zero());
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig<T> {
    /// Steps per unit time.
    pub n: u32,
    /// Horizon `T`, rounded up to the grid.
    pub horizon: T,
    /// Truncation radius `R`.
    pub radius: T,
    /// Relative tolerance of segment norms.
    pub norm_tol: T,
    /// Relative tolerance of the neutral fixed point.
    pub eps_fix: T,
    pub iter_cap: usize,
    /// Stop stepping once either stopping time fires.
    pub halt_on_stop: bool,
}

impl<T: Scalar> RunConfig<T> {
    pub fn new(n: u32, horizon: T, radius: T) -> Self {
        Self {
            n,
            horizon,
            radius,
            norm_tol: T::lit(1e-10),
            eps_fix: T::lit(1e-12),
            iter_cap: 200,
            halt_on_stop: false,
        }
    }

    pub fn step_size(&self) -> T {
        T::one() / T::from_count(self.n as usize)
    }

    /// Number of grid steps covering `[0, horizon]`.
    pub fn steps(&self) -> usize {
        let exact = (self.horizon * T::from_count(self.n as usize)).as_f64();
        (exact - 1e-9 * exact.max(1.0)).ceil().max(0.0) as usize
    }

    /// Smallest admissible `n` for decay rate `r`.
    pub fn min_resolution(r: T) -> u32 {
        (r.as_f64() / std::f64::consts::LN_2 - 1e-12).ceil().max(1.0) as u32
    }

    /// Checks the numeric constraints; `xi_norm` is `‖ξ‖_r`.
    pub fn validate(&self, r: T, xi_norm: T) -> Result<()> {
        if self.n == 0 || T::from_count(self.n as usize) * T::LN_2() < r * (T::one() - T::lit(1e-12)) {
            return Err(Error::InvalidConfig(format!(
                "n = {} violates n ≥ r/ln 2 = {:.6}",
                self.n,
                r.as_f64() / std::f64::consts::LN_2
            )));
        }
        if !(self.horizon > T::zero() && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.radius > T::lit(3.0) * xi_norm) {
            return Err(Error::InvalidConfig(format!(
                "radius R = {} must exceed 3‖ξ‖_r = {}",
                self.radius,
                T::lit(3.0) * xi_norm
            )));
        }
        if !(self.norm_tol > T::zero() && self.eps_fix > T::zero()) || self.iter_cap == 0 {
            return Err(Error::InvalidConfig("tolerances and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// First grid times at which `|x| ≥ R/3` (`tau`) and `‖x_t‖_r ≥ R/3` (`alpha`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoppingMonitor<T> {
    pub radius: T,
    pub tau: Option<T>,
    pub alpha: Option<T>,
    pub tau_step: Option<usize>,
    pub alpha_step: Option<usize>,
}

impl<T: Scalar> StoppingMonitor<T> {
    pub fn new(radius: T) -> Self {
        Self {
            radius,
            tau: None,
            alpha: None,
            tau_step: None,
            alpha_step: None,
        }
    }

    pub fn threshold(&self) -> T {
        self.radius / T::lit(3.0)
    }

    pub fn observe(&mut self, step: usize, t: T, abs_x: T, seg_norm: T) {
        let level = self.threshold();
        if self.tau.is_none() && abs_x >= level {
            self.tau = Some(t);
            self.tau_step = Some(step);
        }
        if self.alpha.is_none() && seg_norm >= level {
            self.alpha = Some(t);
            self.alpha_step = Some(step);
        }
    }

    pub fn stopped(&self) -> bool {
        self.tau.is_some() || self.alpha.is_some()
    }

    /// First grid step at which either monitor fired.
    pub fn stop_step(&self) -> Option<usize> {
        match (self.tau_step, self.alpha_step) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Per-step diagnostics, recorded at the right end `t_{j+1}` of each step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord<T> {
    pub step: usize,
    pub t: T,
    pub abs_x: T,
    /// `‖x_t‖_r` at the grid time.
    pub seg_norm: T,
    /// `|Γ(t)|`.
    pub gamma_abs: T,
    /// Largest `‖x̂_t‖_r / ‖x_t‖_r` over the probes inside the step.
    pub loc1_ratio: T,
    /// Largest `|x(t_n)| / ‖x_t‖_r` over the probes inside the step.
    pub loc2_ratio: T,
    /// `sup ‖p_t‖_r` over the step.
    pub displacement: T,
    /// `|b(x̂_t)|`, constant over the step.
    pub drift_abs: T,
    pub iterations: usize,
    pub residual: T,
    pub stopped: bool,
}

impl<T: Scalar> StepRecord<T> {
    pub fn loc1_ok(&self) -> bool {
        self.loc1_ratio <= T::lit(3.0) * (T::one() + T::lit(LOCALIZATION_SLACK))
    }

    pub fn loc2_ok(&self) -> bool {
        self.loc2_ratio <= T::lit(2.0) * (T::one() + T::lit(LOCALIZATION_SLACK))
    }
}

/// Result of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint<T> {
    pub iterations: usize,
    pub residual: T,
}

/// State of one simulated path.
#[derive(Debug, Clone)]
pub struct EmState<T> {
    path: HistoryPath<T>,
    n: u32,
    step: usize,
    gamma: Vec<T>,
    monitor: StoppingMonitor<T>,
    norm_tol: T,
    eps_fix: T,
    iter_cap: usize,
    halt_on_stop: bool,
    halted: bool,
    noise_dim: usize,
}

impl<T: Scalar> EmState<T> {
    pub fn new<M: Model<T> + ?Sized>(model: &M, init: Arc<InitialData<T>>, config: &RunConfig<T>) -> Result<Self> {
        if init.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: init.dim(),
            });
        }
        if init.decay() != model.decay() {
            return Err(Error::InvalidInitialData(format!(
                "initial data uses r = {} but the model uses r = {}",
                init.decay(),
                model.decay()
            )));
        }
        let mut path = HistoryPath::with_capacity(init, config.norm_tol, config.steps())?;
        config.validate(model.decay(), path.grid_norm(0))?;
        for rate in model.kernel_rates() {
            path.track_kernel(rate, config.norm_tol)?;
        }
        let d = model.dim();
        let mut gamma = vec![T::zero(); d];
        model.neutral(&path.frontier_segment(), &mut gamma)?;
        for (g, &x) in gamma.iter_mut().zip(path.last_value()) {
            *g = x - *g;
        }
        let mut monitor = StoppingMonitor::new(config.radius);
        monitor.observe(0, T::zero(), norm(path.last_value()), path.grid_norm(0));
        Ok(Self {
            path,
            n: config.n,
            step: 0,
            gamma,
            monitor,
            norm_tol: config.norm_tol,
            eps_fix: config.eps_fix,
            iter_cap: config.iter_cap,
            halt_on_stop: config.halt_on_stop,
            halted: false,
            noise_dim: model.noise_dim(),
        })
    }

    pub fn path(&self) -> &HistoryPath<T> {
        &self.path
    }

    pub fn into_path(self) -> HistoryPath<T> {
        self.path
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn step_size(&self) -> T {
        T::one() / T::from_count(self.n as usize)
    }

    /// Grid time `j/n`.
    pub fn grid_time(&self, j: usize) -> T {
        T::from_count(j) / T::from_count(self.n as usize)
    }

    pub fn time(&self) -> T {
        self.grid_time(self.step)
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    pub fn monitor(&self) -> &StoppingMonitor<T> {
        &self.monitor
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Index `⌊nt⌋` of the last grid time not after `t`.
    fn floor_index(&self, t: T) -> usize {
        let times = self.path.times();
        let guess = (t * T::from_count(self.n as usize)).floor().to_usize().unwrap_or(0);
        let mut j = guess.min(times.len() - 1);
        while j + 1 < times.len() && times[j + 1] <= t {
            j += 1;
        }
        while j > 0 && times[j] > t {
            j -= 1;
        }
        j
    }

    /// `x̂_t(θ) = x((t + θ) ∧ t_n)` with `t_n = ⌊nt⌋/n`, for
    /// `0 ≤ t < t_{j+1}` where `t_j` is the frontier.
    pub fn frozen_segment(&self, t: T) -> Result<SegmentView<'_, T>> {
        let limit = self.grid_time(self.step + 1);
        if t < T::zero() || t >= limit {
            return Err(Error::QueryBeyondFrontier {
                t: t.as_f64(),
                frontier: limit.as_f64(),
            });
        }
        let cap = self.path.time(self.floor_index(t));
        self.path.capped_segment(t, cap)
    }

    /// `‖x_t - x̂_t‖_r` for `0 ≤ t ≤ frontier`. The difference lives on the
    /// last partial cell, so this is a single-cell sup.
    pub fn displacement(&self, t: T) -> Result<T> {
        if t < T::zero() || t > self.path.frontier() {
            return Err(Error::QueryBeyondFrontier {
                t: t.as_f64(),
                frontier: self.path.frontier().as_f64(),
            });
        }
        let j = self.floor_index(t);
        Ok(self.step_displacement(j, t))
    }

    fn step_displacement(&self, j: usize, t: T) -> T {
        let tj = self.path.time(j);
        if t <= tj {
            return T::zero();
        }
        let d = self.path.dim();
        let mut gap = vec![T::zero(); d];
        self.path.eval_unchecked(t, &mut gap);
        for (g, &x) in gap.iter_mut().zip(self.path.value(j)) {
            *g = *g - x;
        }
        let zero = vec![T::zero(); d];
        linear_cell_sup(self.path.decay(), tj - t, T::zero(), &zero, &gap, T::zero(), self.norm_tol)
    }

    /// Advances one step with Brownian increment `dw`.
    pub fn step<M: Model<T> + ?Sized>(&mut self, model: &M, dw: &[T]) -> Result<FixedPoint<T>> {
        if self.halted {
            return Err(Error::StoppedState {
                t: self.time().as_f64(),
            });
        }
        if dw.len() != self.noise_dim {
            return Err(Error::DimensionMismatch {
                expected: self.noise_dim,
                found: dw.len(),
            });
        }
        let d = self.path.dim();
        let m = self.noise_dim;
        let h = self.step_size();
        let mut drift = vec![T::zero(); d];
        let mut diffusion = vec![T::zero(); d * m];
        {
            let seg = self.path.frontier_segment();
            model.drift(&seg, &mut drift)?;
            model.diffusion(&seg, &mut diffusion)?;
        }
        for i in 0..d {
            let mut g = self.gamma[i] + drift[i] * h;
            for (k, &w) in dw.iter().enumerate() {
                g = g + diffusion[i * m + k] * w;
            }
            self.gamma[i] = g;
        }
        let t_next = self.grid_time(self.step + 1);
        let outcome = if model.neutral_is_zero() {
            self.path.append(t_next, &self.gamma)?;
            FixedPoint {
                iterations: 0,
                residual: T::zero(),
            }
        } else {
            let start = self.path.last_value().to_vec();
            self.path.append(t_next, &start)?;
            self.solve_neutral(model)?
        };
        self.step += 1;
        let x = self.path.last_value();
        self.monitor.observe(self.step, t_next, norm(x), self.path.grid_norm(self.step));
        if self.halt_on_stop && self.monitor.stopped() {
            self.halted = true;
        }
        Ok(outcome)
    }

    fn solve_neutral<M: Model<T> + ?Sized>(&mut self, model: &M) -> Result<FixedPoint<T>> {
        let d = self.path.dim();
        let mut next = vec![T::zero(); d];
        let mut residual = T::infinity();
        for it in 1..=self.iter_cap {
            model.neutral(&self.path.frontier_segment(), &mut next)?;
            for (x, &g) in next.iter_mut().zip(&self.gamma) {
                *x = *x + g;
            }
            residual = dist(&next, self.path.last_value());
            if !residual.is_finite() {
                break;
            }
            self.path.replace_frontier(&next);
            if residual <= self.eps_fix * (T::one() + norm(&next)) {
                return Ok(FixedPoint {
                    iterations: it,
                    residual,
                });
            }
        }
        Err(Error::FixedPointDivergence {
            step: self.step + 1,
            residual: residual.as_f64(),
            iterations: self.iter_cap,
        })
    }

    /// `|Γ(t_j) - (x(t_j) - D(x_{t_j}))|` at the frontier.
    pub fn gamma_defect<M: Model<T> + ?Sized>(&self, model: &M) -> Result<T> {
        let mut dv = vec![T::zero(); self.path.dim()];
        model.neutral(&self.path.frontier_segment(), &mut dv)?;
        let implied: Vec<T> = self.path.last_value().iter().zip(&dv).map(|(&x, &v)| x - v).collect();
        Ok(dist(&implied, &self.gamma))
    }

    /// Localization diagnostics for the step just taken (`t_{j-1} → t_j`),
    /// probed at the midpoint and at the left limit of `t_j`.
    fn localization(&self) -> (T, T, T) {
        let j = self.step;
        let tj = self.path.time(j);
        let prev = self.path.time(j - 1);
        let x_prev = norm(self.path.value(j - 1));
        let mid = prev + (tj - prev) * T::lit(0.5);
        let mut loc1 = T::zero();
        let mut loc2 = T::zero();
        for t in [mid, tj] {
            let plain = self.path.segment(t).and_then(|s| s.fading_norm(self.norm_tol));
            let frozen = self.path.capped_segment(t, prev).and_then(|s| s.fading_norm(self.norm_tol));
            let (Ok(plain), Ok(frozen)) = (plain, frozen) else { continue };
            loc1 = loc1.max(ratio(frozen, plain));
            loc2 = loc2.max(ratio(x_prev, plain));
        }
        (loc1, loc2, self.step_displacement(j - 1, tj))
    }
}

fn ratio<T: Scalar>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else if num > T::zero() {
        T::infinity()
    } else {
        T::zero()
    }
}

/// A completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub path: HistoryPath<T>,
    pub n: u32,
    /// Planned number of steps; fewer were taken if the run halted.
    pub steps: usize,
    pub monitor: StoppingMonitor<T>,
    pub records: Vec<StepRecord<T>>,
    /// `C(R)`: bound on `|b|` over the ball of radius `R/3`, when the model
    /// provides one.
    pub drift_bound: Option<T>,
    /// `sup_t e^{2rt} ‖x_t‖²_r` over the grid.
    pub weighted_norm_sup: T,
    /// `sup_t e^{2rt} |Γ(t)|²` over the grid.
    pub weighted_gamma_sup: T,
    /// `|Γ(0)|`.
    pub gamma0_abs: T,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn halted(&self) -> bool {
        self.path.len() < self.steps + 1
    }

    /// `x(t_j ∧ stop)`: the path value, held at its last sample after a halt.
    pub fn absorbed_value(&self, j: usize) -> &[T] {
        self.path.value(j.min(self.path.len() - 1))
    }

    pub fn absorbed_norm(&self, j: usize) -> T {
        self.path.grid_norm(j.min(self.path.len() - 1))
    }

    pub fn time(&self, j: usize) -> T {
        T::from_count(j) / T::from_count(self.n as usize)
    }

    pub fn loc1_violations(&self) -> usize {
        self.records.iter().filter(|r| !r.loc1_ok()).count()
    }

    pub fn loc2_violations(&self) -> usize {
        self.records.iter().filter(|r| !r.loc2_ok()).count()
    }

    /// Whether `|b(x̂_t)| ≤ C(R)` held at every step before stopping.
    pub fn drift_within_bound(&self) -> Option<bool> {
        let bound = self.drift_bound?;
        let slack = T::one() + T::lit(LOCALIZATION_SLACK);
        Some(
            self.records
                .iter()
                .take_while(|r| !r.stopped)
                .all(|r| r.drift_abs <= bound * slack),
        )
    }
}

/// Simulates one path on `[0, horizon]`.
pub fn run<T: Scalar, M: Model<T> + ?Sized, N: NoiseSource<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    config: &RunConfig<T>,
    noise: &mut N,
) -> Result<RunOutcome<T>> {
    let mut state = EmState::new(model, init, config)?;
    let steps = config.steps();
    let r = model.decay();
    let two = T::lit(2.0);
    let mut records = Vec::with_capacity(steps);
    let mut dw = vec![T::zero(); model.noise_dim()];
    let mut drift = vec![T::zero(); model.dim()];
    let gamma0_abs = norm(state.gamma());
    let mut weighted_norm_sup = state.path.grid_norm(0).powi(2);
    let mut weighted_gamma_sup = gamma0_abs * gamma0_abs;
    for j in 0..steps {
        if state.is_halted() {
            break;
        }
        model.drift(&state.path.frontier_segment(), &mut drift)?;
        let drift_abs = norm(&drift);
        noise.increment(j, &mut dw)?;
        let fp = state.step(model, &dw)?;
        let (loc1_ratio, loc2_ratio, displacement) = state.localization();
        let t = state.time();
        let seg_norm = state.path.grid_norm(j + 1);
        let gamma_abs = norm(state.gamma());
        let weight = (two * r * t).exp();
        weighted_norm_sup = weighted_norm_sup.max(weight * seg_norm * seg_norm);
        weighted_gamma_sup = weighted_gamma_sup.max(weight * gamma_abs * gamma_abs);
        let record = StepRecord {
            step: j + 1,
            t,
            abs_x: norm(state.path.last_value()),
            seg_norm,
            gamma_abs,
            loc1_ratio,
            loc2_ratio,
            displacement,
            drift_abs,
            iterations: fp.iterations,
            residual: fp.residual,
            stopped: state.monitor().stopped(),
        };
        debug_assert!(record.loc1_ok() && record.loc2_ok(), "localization failed: {record:?}");
        records.push(record);
    }
    let monitor = state.monitor().clone();
    Ok(RunOutcome {
        path: state.into_path(),
        n: config.n,
        steps,
        monitor,
        records,
        drift_bound: model.drift_bound(config.radius / T::lit(3.0)),
        weighted_norm_sup,
        weighted_gamma_sup,
        gamma0_abs,
    })
}
