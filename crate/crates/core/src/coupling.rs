//! Multi-resolution Brownian coupling, the Cauchy-in-probability harness and
//! the non-explosion scan.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::em_scheme::{run, NoiseSource, RunConfig, RunOutcome};
use crate::error::{Error, Result};
use crate::history_path::norm::linear_cell_sup;
use crate::history_path::{segment_distance, HistoryPath, InitialData};
use crate::model::Model;
use crate::montecarlo::{fold_paths, map_paths};
use crate::scalar::Scalar;
use crate::stats::{mean_stderr, median, Proportion};

/// Brownian increments on the fine grid `k/fine`, keyed by `(seed, path_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BrownianDriver {
    pub seed: u64,
    pub fine: u32,
    pub noise_dim: usize,
}

impl BrownianDriver {
    pub fn new(seed: u64, fine: u32, noise_dim: usize) -> Self {
        Self { seed, fine, noise_dim }
    }

    /// Fine steps per step at resolution `n`.
    pub fn ratio(&self, n: u32) -> Result<usize> {
        if n == 0 || !self.fine.is_multiple_of(n) {
            return Err(Error::ResolutionMismatch {
                resolution: n,
                fine: self.fine,
            });
        }
        Ok((self.fine / n) as usize)
    }

    pub fn stream<T: Scalar>(&self, path_id: u64) -> PathStream<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path_id);
        PathStream {
            rng,
            driver: *self,
            scale: (T::one() / T::from_count(self.fine as usize)).sqrt(),
            cache: Vec::new(),
        }
    }
}

/// The increments of one path, generated lazily and kept so that several
/// resolutions can replay them.
#[derive(Debug, Clone)]
pub struct PathStream<T> {
    rng: ChaCha8Rng,
    driver: BrownianDriver,
    scale: T,
    cache: Vec<T>,
}

impl<T: Scalar> PathStream<T> {
    fn ensure(&mut self, fine_steps: usize) {
        let want = fine_steps * self.driver.noise_dim;
        while self.cache.len() < want {
            let z = T::standard_normal(&mut self.rng);
            self.cache.push(z * self.scale);
        }
    }

    /// Increment over `[k/fine, (k+1)/fine]`.
    pub fn fine_increment(&mut self, k: usize) -> &[T] {
        self.ensure(k + 1);
        let m = self.driver.noise_dim;
        &self.cache[k * m..(k + 1) * m]
    }

    /// Increment over `[j/n, (j+1)/n]`: the in-order sum of the fine
    /// increments it contains.
    pub fn increment(&mut self, n: u32, j: usize, out: &mut [T]) -> Result<()> {
        let ratio = self.driver.ratio(n)?;
        let m = self.driver.noise_dim;
        if out.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: out.len(),
            });
        }
        self.ensure((j + 1) * ratio);
        out.iter_mut().for_each(|o| *o = T::zero());
        for k in j * ratio..(j + 1) * ratio {
            for (o, &w) in out.iter_mut().zip(&self.cache[k * m..(k + 1) * m]) {
                *o = *o + w;
            }
        }
        Ok(())
    }

    /// Noise source at resolution `n`.
    pub fn level(&mut self, n: u32) -> Result<Level<'_, T>> {
        self.driver.ratio(n)?;
        Ok(Level { stream: self, n })
    }
}

pub struct Level<'a, T> {
    stream: &'a mut PathStream<T>,
    n: u32,
}

impl<T: Scalar> NoiseSource<T> for Level<'_, T> {
    fn increment(&mut self, step: usize, out: &mut [T]) -> Result<()> {
        self.stream.increment(self.n, step, out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingConfig<T> {
    /// Horizon, radius and tolerances; the resolution field is ignored.
    pub run: RunConfig<T>,
    /// Fine level of the driver; every resolution must divide it.
    pub fine: u32,
    pub paths: usize,
    pub seed: u64,
    /// Thresholds `ε` of the exceedance probabilities.
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDistance {
    pub path_id: u64,
    pub n: u32,
    pub m: u32,
    pub sup_distance: f64,
    pub stopped_n: bool,
    pub stopped_m: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exceedance {
    pub epsilon: f64,
    pub probability: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CauchyReport {
    pub n: u32,
    pub m: u32,
    pub paths: usize,
    pub median_distance: f64,
    pub mean_distance: f64,
    pub exceedance: Vec<Exceedance>,
    pub stopped_n: Proportion,
    pub stopped_m: Proportion,
    #[serde(skip)]
    pub distances: Vec<PathDistance>,
}

impl CauchyReport {
    fn assemble(n: u32, m: u32, distances: Vec<PathDistance>, epsilons: &[f64]) -> Self {
        let sup: Vec<f64> = distances.iter().map(|d| d.sup_distance).collect();
        let paths = distances.len();
        let exceedance = epsilons
            .iter()
            .map(|&epsilon| Exceedance {
                epsilon,
                probability: Proportion::wilson95(sup.iter().filter(|&&s| s >= epsilon).count(), paths),
            })
            .collect();
        Self {
            n,
            m,
            paths,
            median_distance: median(&sup),
            mean_distance: mean_stderr(&sup).0,
            exceedance,
            stopped_n: Proportion::wilson95(distances.iter().filter(|d| d.stopped_n).count(), paths),
            stopped_m: Proportion::wilson95(distances.iter().filter(|d| d.stopped_m).count(), paths),
            distances,
        }
    }
}

/// `sup_t ‖x_t - y_t‖_r` over the union of both grids, for two runs of the
/// same initial data. A run that halted is held at its last sample.
pub fn sup_distance<T: Scalar>(a: &HistoryPath<T>, b: &HistoryPath<T>, horizon: T, tol: T) -> Result<T> {
    let grid = union_grid(a.times(), b.times(), horizon);
    let d = a.dim();
    let r = a.decay();
    let diff = |t: T, out: &mut [T]| -> Result<()> {
        let mut yb = vec![T::zero(); d];
        a.evaluate(t.min(a.frontier()), out)?;
        b.evaluate(t.min(b.frontier()), &mut yb)?;
        out.iter_mut().zip(&yb).for_each(|(o, &y)| *o = *o - y);
        Ok(())
    };
    if !Arc::ptr_eq(a.initial(), b.initial()) {
        let mut best = T::zero();
        for &t in &grid {
            let sa = a.segment(t.min(a.frontier()))?;
            let sb = b.segment(t.min(b.frontier()))?;
            best = best.max(segment_distance(&sa, &sb, tol)?);
        }
        return Ok(best);
    }
    let mut prev = vec![T::zero(); d];
    let mut cur = vec![T::zero(); d];
    let mut carried = T::zero();
    let mut best = T::zero();
    for w in grid.windows(2) {
        diff(w[1], &mut cur)?;
        let h = w[1] - w[0];
        let decayed = (-r * h).exp() * carried;
        carried = decayed.max(linear_cell_sup(r, -h, T::zero(), &prev, &cur, decayed, tol));
        best = best.max(carried);
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(best)
}

fn union_grid<T: Scalar>(a: &[T], b: &[T], horizon: T) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if next > horizon * (T::one() + T::epsilon()) && !out.is_empty() {
            break;
        }
        out.push(next);
    }
    out
}

fn simulate_level<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: &Arc<InitialData<T>>,
    cfg: &CouplingConfig<T>,
    stream: &mut PathStream<T>,
    n: u32,
) -> Result<RunOutcome<T>> {
    let mut run_cfg = cfg.run.clone();
    run_cfg.n = n;
    run(model, init.clone(), &run_cfg, &mut stream.level(n)?)
}

/// Runs resolutions `n` and `m` on shared increments for every path and
/// summarizes `sup_t ‖xⁿ_t - xᵐ_t‖_r`.
pub fn coupled_pair<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    n: u32,
    m: u32,
    cfg: &CouplingConfig<T>,
) -> Result<CauchyReport> {
    Ok(cauchy_ladder(model, init, &[n, m], cfg)?.remove(0))
}

/// Runs every level once per path on shared increments and reports each
/// consecutive pair `(levels[i], levels[i+1])`.
pub fn cauchy_ladder<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    levels: &[u32],
    cfg: &CouplingConfig<T>,
) -> Result<Vec<CauchyReport>> {
    if levels.len() < 2 {
        return Err(Error::InvalidConfig("a Cauchy comparison needs at least two resolutions".into()));
    }
    if cfg.paths == 0 {
        return Err(Error::InvalidConfig("path count must be positive".into()));
    }
    let driver = BrownianDriver::new(cfg.seed, cfg.fine, model.noise_dim());
    for &n in levels {
        driver.ratio(n)?;
    }
    let horizon = cfg.run.horizon;
    let tol = cfg.run.norm_tol;
    let per_path = map_paths(cfg.paths, |id| {
        let mut stream = driver.stream::<T>(id);
        let mut outcomes: Vec<Option<RunOutcome<T>>> = Vec::with_capacity(levels.len());
        for (i, &n) in levels.iter().enumerate() {
            let reuse = levels[..i].iter().position(|&p| p == n);
            match reuse {
                Some(_) => outcomes.push(None),
                None => outcomes.push(Some(simulate_level(model, &init, cfg, &mut stream, n)?)),
            }
        }
        let get = |i: usize| -> &RunOutcome<T> {
            let k = levels[..=i].iter().position(|&p| p == levels[i]).unwrap();
            outcomes[k].as_ref().unwrap()
        };
        let mut row = Vec::with_capacity(levels.len() - 1);
        for i in 0..levels.len() - 1 {
            let (a, b) = (get(i), get(i + 1));
            let dist = if levels[i] == levels[i + 1] {
                T::zero()
            } else {
                sup_distance(&a.path, &b.path, horizon, tol)?
            };
            row.push(PathDistance {
                path_id: id,
                n: levels[i],
                m: levels[i + 1],
                sup_distance: dist.as_f64(),
                stopped_n: a.monitor.stopped(),
                stopped_m: b.monitor.stopped(),
            });
        }
        Ok(row)
    })?;
    let mut columns: Vec<Vec<PathDistance>> = vec![Vec::with_capacity(cfg.paths); levels.len() - 1];
    for row in per_path {
        for (col, d) in columns.iter_mut().zip(row) {
            col.push(d);
        }
    }
    Ok(columns
        .into_iter()
        .enumerate()
        .map(|(i, col)| CauchyReport::assemble(levels[i], levels[i + 1], col, &cfg.epsilons))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonExplosionRow {
    pub radius: f64,
    /// Empirical `P(τ_R ≤ T)`.
    pub stopped: Proportion,
    /// Monte Carlo estimate of `E sup_{t ≤ T∧τ_R} e^{2rt}|Γ(t)|²`.
    pub gamma_hat: f64,
    pub gamma_hat_stderr: f64,
    /// `16 Γ̂ / R²`.
    pub chebyshev_bound: f64,
    /// Whether the lower Wilson limit of the stopping probability sits
    /// below the bound evaluated at `Γ̂ + 3·stderr`.
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonExplosionTable {
    pub n: u32,
    pub horizon: f64,
    pub paths: usize,
    pub rows: Vec<NonExplosionRow>,
    /// Stopping probabilities are nonincreasing in `R`.
    pub monotone: bool,
}

#[derive(Clone)]
struct ScanAcc {
    stopped: Vec<usize>,
    gamma_sum: Vec<f64>,
    gamma_sq: Vec<f64>,
}

/// Estimates `P(τ_R ≤ T)` for each radius from one unstopped run per path.
pub fn nonexplosion_scan<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    init: Arc<InitialData<T>>,
    n: u32,
    radii: &[T],
    cfg: &CouplingConfig<T>,
) -> Result<NonExplosionTable> {
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("radius list must be non-empty and increasing".into()));
    }
    let driver = BrownianDriver::new(cfg.seed, cfg.fine, model.noise_dim());
    driver.ratio(n)?;
    let mut run_cfg = cfg.run.clone();
    run_cfg.n = n;
    run_cfg.radius = radii[radii.len() - 1];
    run_cfg.halt_on_stop = false;
    let xi_norm = HistoryPath::new(init.clone(), cfg.run.norm_tol)?.grid_norm(0);
    if !(radii[0] > T::lit(3.0) * xi_norm) {
        return Err(Error::InvalidConfig(format!(
            "every radius must exceed 3‖ξ‖_r = {}",
            T::lit(3.0) * xi_norm
        )));
    }
    let k = radii.len();
    let two_r = T::lit(2.0) * model.decay();
    let acc = fold_paths(
        cfg.paths,
        || ScanAcc {
            stopped: vec![0; k],
            gamma_sum: vec![0.0; k],
            gamma_sq: vec![0.0; k],
        },
        |acc, id| {
            let mut stream = driver.stream::<T>(id);
            let out = run(model, init.clone(), &run_cfg, &mut stream.level(n)?)?;
            let g0 = out.gamma0_abs * out.gamma0_abs;
            for (i, &radius) in radii.iter().enumerate() {
                let level = radius / T::lit(3.0);
                let mut sup = g0;
                let mut stopped = false;
                for rec in &out.records {
                    sup = sup.max((two_r * rec.t).exp() * rec.gamma_abs * rec.gamma_abs);
                    if rec.abs_x >= level || rec.seg_norm >= level {
                        stopped = true;
                        break;
                    }
                }
                acc.stopped[i] += stopped as usize;
                let s = sup.as_f64();
                acc.gamma_sum[i] += s;
                acc.gamma_sq[i] += s * s;
            }
            Ok(())
        },
        |a, b| {
            for i in 0..k {
                a.stopped[i] += b.stopped[i];
                a.gamma_sum[i] += b.gamma_sum[i];
                a.gamma_sq[i] += b.gamma_sq[i];
            }
        },
    )?;
    let m = cfg.paths as f64;
    let rows: Vec<NonExplosionRow> = radii
        .iter()
        .enumerate()
        .map(|(i, &radius)| {
            let r = radius.as_f64();
            let mean = acc.gamma_sum[i] / m;
            let var = if cfg.paths > 1 {
                ((acc.gamma_sq[i] - m * mean * mean) / (m - 1.0)).max(0.0)
            } else {
                0.0
            };
            let se = (var / m).sqrt();
            let stopped = Proportion::wilson95(acc.stopped[i], cfg.paths);
            NonExplosionRow {
                radius: r,
                stopped,
                gamma_hat: mean,
                gamma_hat_stderr: se,
                chebyshev_bound: 16.0 * mean / (r * r),
                dominated: stopped.lower <= 16.0 * (mean + 3.0 * se) / (r * r),
            }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].stopped.estimate <= w[0].stopped.estimate);
    Ok(NonExplosionTable {
        n,
        horizon: cfg.run.horizon.as_f64(),
        paths: cfg.paths,
        rows,
        monotone,
    })
}
