//! Reproducible random segments for the assumption checkers.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::history_path::{HistoryPath, InitialData, TailRule};
use crate::scalar::Scalar;

/// Random piecewise-linear segments: `knots` uniform knots on `[-horizon, 0]`,
/// Gaussian values, a constant tail, and a norm drawn log-uniformly from
/// `[radius·10⁻³, radius]`.
///
/// With `spike_at = Some(θ*)`, a fraction of pairs differ only by a narrow
/// tent centred on `θ*`.
#[derive(Debug, Clone)]
pub struct SegmentSampler<T> {
    dim: usize,
    r: T,
    knots: usize,
    horizon: T,
    radius: T,
    tol: T,
    spike_at: Option<T>,
    spike_fraction: f64,
    rng: ChaCha8Rng,
}

/// A sampled segment, stored as a path with no grid steps.
pub type SampledSegment<T> = HistoryPath<T>;

impl<T: Scalar> SegmentSampler<T> {
    pub fn new(dim: usize, r: T, radius: T, seed: u64) -> Self {
        Self {
            dim,
            r,
            knots: 12,
            horizon: T::lit(6.0) / r,
            radius,
            tol: T::lit(1e-10),
            spike_at: None,
            spike_fraction: 0.5,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_knots(mut self, knots: usize) -> Self {
        self.knots = knots.max(2);
        self
    }

    pub fn with_horizon(mut self, horizon: T) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_radius(mut self, radius: T) -> Self {
        self.radius = radius;
        self
    }

    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_spike(mut self, theta: T, fraction: f64) -> Self {
        self.spike_at = Some(theta);
        self.spike_fraction = fraction.clamp(0.0, 1.0);
        self
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn tolerance(&self) -> T {
        self.tol
    }

    fn spike_width(&self) -> T {
        (T::lit(0.05) / self.r).min(T::lit(0.05))
    }

    fn knot_set(&mut self) -> Vec<T> {
        let mut knots = vec![T::zero(), -self.horizon];
        for _ in 0..self.knots.saturating_sub(2) {
            let u: f64 = self.rng.random();
            knots.push(-self.horizon * T::lit(u));
        }
        if let Some(s) = self.spike_at {
            let w = self.spike_width();
            knots.retain(|&k| (k - s).abs() > w);
            knots.extend([s - w, s, (s + w).min(T::zero())]);
            if s + w > T::zero() {
                knots.push(T::zero());
            }
        }
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup();
        knots
    }

    fn gaussian_values(&mut self, count: usize) -> Vec<Vec<T>> {
        (0..count)
            .map(|_| (0..self.dim).map(|_| T::standard_normal(&mut self.rng)).collect())
            .collect()
    }

    fn target_norm(&mut self) -> T {
        let u: f64 = self.rng.random();
        self.radius * T::lit(10f64.powf(-3.0 * u))
    }

    fn build(&self, knots: &[T], values: Vec<Vec<T>>) -> Result<SampledSegment<T>> {
        let init = InitialData::table(knots.to_vec(), values, TailRule::Constant, self.r)?;
        HistoryPath::new(Arc::new(init), self.tol)
    }

    fn rescale(values: &mut [Vec<T>], factor: T) {
        values.iter_mut().flatten().for_each(|v| *v = *v * factor);
    }

    /// One segment with `‖φ‖_r ≤ radius`.
    pub fn sample(&mut self) -> Result<SampledSegment<T>> {
        let knots = self.knot_set();
        let mut values = self.gaussian_values(knots.len());
        let raw = self.build(&knots, values.clone())?.grid_norm(0);
        if raw > T::zero() {
            let target = self.target_norm();
            Self::rescale(&mut values, target / raw);
        }
        self.build(&knots, values)
    }

    /// A pair with `‖φ‖_r ∨ ‖ψ‖_r ≤ radius`.
    pub fn sample_pair(&mut self) -> Result<(SampledSegment<T>, SampledSegment<T>)> {
        let knots = self.knot_set();
        let mut phi = self.gaussian_values(knots.len());
        let spike = self.spike_at.is_some() && self.rng.random::<f64>() < self.spike_fraction;
        let mut delta = if spike {
            let s = self.spike_at.unwrap();
            let h = T::standard_normal(&mut self.rng);
            let dir: Vec<T> = (0..self.dim).map(|_| T::standard_normal(&mut self.rng)).collect();
            knots
                .iter()
                .map(|&k| {
                    if k == s {
                        dir.iter().map(|&x| x * h).collect()
                    } else {
                        vec![T::zero(); self.dim]
                    }
                })
                .collect()
        } else {
            self.gaussian_values(knots.len())
        };
        let raw_phi = self.build(&knots, phi.clone())?.grid_norm(0);
        if raw_phi > T::zero() {
            let target = self.target_norm();
            Self::rescale(&mut phi, target / raw_phi);
        }
        let raw_delta = self.build(&knots, delta.clone())?.grid_norm(0);
        if raw_delta > T::zero() {
            let target = self.target_norm();
            Self::rescale(&mut delta, target / raw_delta);
        }
        let mut psi: Vec<Vec<T>> = phi
            .iter()
            .zip(&delta)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| x + y).collect())
            .collect();
        let n_phi = self.build(&knots, phi.clone())?.grid_norm(0);
        let n_psi = self.build(&knots, psi.clone())?.grid_norm(0);
        let big = n_phi.max(n_psi);
        if big > self.radius {
            let f = self.radius / big;
            Self::rescale(&mut phi, f);
            Self::rescale(&mut psi, f);
        }
        Ok((self.build(&knots, phi)?, self.build(&knots, psi)?))
    }

    /// `sample_pair` that retries pairs at zero distance up to `retries` times.
    pub fn sample_distinct_pair(&mut self, retries: usize) -> Result<(SampledSegment<T>, SampledSegment<T>, T)> {
        for _ in 0..=retries {
            let (a, b) = self.sample_pair()?;
            let dist = crate::history_path::segment_distance(
                &a.segment(T::zero())?,
                &b.segment(T::zero())?,
                self.tol,
            )?;
            if dist > T::zero() {
                return Ok((a, b, dist));
            }
        }
        Err(Error::DegeneratePair { attempts: retries + 1 })
    }
}
