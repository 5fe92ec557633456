use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::initial::InitialData;
use super::norm::{linear_cell_kernel, linear_cell_sup, scan_norm};
use super::segment::{InitialProfile, SegmentView};

/// Running exponential moments `J_j = ∫_{-∞}^0 e^{λθ} x(s_j + θ) dθ` at every
/// grid time, maintained by the recurrence
/// `J_{j+1} = e^{-λ w} J_j + ∫_{-w}^0 e^{λθ} x(s_{j+1} + θ) dθ`.
#[derive(Debug, Clone)]
struct KernelCache<T> {
    rate: T,
    values: Vec<T>,
}

/// A trajectory on `(-∞, s_K]`: initial data on `(-∞, 0]` followed by grid
/// samples on `[0, s_K]`, piecewise linear in between.
///
/// The weighted norm of the segment at every grid time is cached as samples
/// are appended, so segment norms cost O(1) amortised instead of a scan over
/// the whole past.
#[derive(Debug, Clone)]
pub struct HistoryPath<T> {
    init: Arc<InitialData<T>>,
    dim: usize,
    times: Vec<T>,
    values: Vec<T>,
    norms: Vec<T>,
    norm_tol: T,
    kernels: Vec<KernelCache<T>>,
}

impl<T: Scalar> HistoryPath<T> {
    /// Starts a path at `s_0 = 0` with `x(0) = ξ(0)`. `norm_tol` is the
    /// relative tolerance of the cached segment norms.
    pub fn new(init: Arc<InitialData<T>>, norm_tol: T) -> Result<Self> {
        let dim = init.dim();
        let x0 = init.value_vec(T::zero());
        let n0 = scan_norm(&InitialProfile::new(&init), norm_tol)?;
        Ok(Self {
            init,
            dim,
            times: vec![T::zero()],
            values: x0,
            norms: vec![n0],
            norm_tol,
            kernels: Vec::new(),
        })
    }

    pub fn with_capacity(init: Arc<InitialData<T>>, norm_tol: T, steps: usize) -> Result<Self> {
        let mut p = Self::new(init, norm_tol)?;
        p.times.reserve(steps);
        p.values.reserve(steps * p.dim);
        p.norms.reserve(steps);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decay(&self) -> T {
        self.init.decay()
    }

    pub fn initial(&self) -> &Arc<InitialData<T>> {
        &self.init
    }

    pub fn norm_tol(&self) -> T {
        self.norm_tol
    }

    /// Number of grid samples, including `s_0 = 0`.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frontier(&self) -> T {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn time(&self, j: usize) -> T {
        self.times[j]
    }

    pub fn value(&self, j: usize) -> &[T] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn last_value(&self) -> &[T] {
        self.value(self.len() - 1)
    }

    /// Cached `‖x_{s_j}‖_r`.
    pub fn grid_norm(&self, j: usize) -> T {
        self.norms[j]
    }

    /// Index `j` of the grid cell containing `t ≥ 0`: `s_j ≤ t`, with
    /// `s_{j+1} > t` unless `t` is the frontier.
    pub(crate) fn cell_index(&self, t: T) -> usize {
        let k = self.times.partition_point(|&s| s <= t);
        k.saturating_sub(1)
    }

    /// Point evaluation for `t ≤ frontier` (no bounds check).
    pub(crate) fn eval_unchecked(&self, t: T, out: &mut [T]) {
        if t <= T::zero() {
            self.init.value_at(t, out);
            return;
        }
        let j = self.cell_index(t);
        let a = self.value(j);
        if j + 1 >= self.len() || self.times[j] == t {
            out.copy_from_slice(a);
            return;
        }
        let b = self.value(j + 1);
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = x + (y - x) * w;
        }
    }

    pub fn evaluate(&self, t: T, out: &mut [T]) -> Result<()> {
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: out.len(),
            });
        }
        if t > self.frontier() {
            return Err(Error::QueryBeyondFrontier {
                t: t.as_f64(),
                frontier: self.frontier().as_f64(),
            });
        }
        self.eval_unchecked(t, out);
        Ok(())
    }

    pub fn evaluate_vec(&self, t: T) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim];
        self.evaluate(t, &mut out)?;
        Ok(out)
    }

    /// Extends the grid with `x(t) = v` for `t` beyond the frontier.
    pub fn append(&mut self, t: T, v: &[T]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        if !(t > self.frontier()) {
            return Err(Error::NonMonotoneTime {
                t: t.as_f64(),
                frontier: self.frontier().as_f64(),
            });
        }
        self.times.push(t);
        self.values.extend_from_slice(v);
        self.norms.push(T::zero());
        for k in &mut self.kernels {
            k.values.extend(std::iter::repeat_n(T::zero(), self.dim));
        }
        self.refresh_frontier_caches();
        Ok(())
    }

    /// Overwrites the frontier sample; used by the implicit neutral step.
    pub(crate) fn replace_frontier(&mut self, v: &[T]) {
        debug_assert!(self.len() > 1, "x(0) is fixed by the initial data");
        let k = self.len() - 1;
        self.values[k * self.dim..].copy_from_slice(v);
        self.refresh_frontier_caches();
    }

    fn refresh_frontier_caches(&mut self) {
        let k = self.len() - 1;
        let d = self.dim;
        let w = self.times[k] - self.times[k - 1];
        let r = self.decay();
        let (prev, cur) = self.values[(k - 1) * d..].split_at(d);
        let carried = (-r * w).exp() * self.norms[k - 1];
        let cell = linear_cell_sup(r, -w, T::zero(), prev, cur, carried, self.norm_tol);
        self.norms[k] = carried.max(cell);
        let mut buf = vec![T::zero(); d];
        for cache in &mut self.kernels {
            linear_cell_kernel(cache.rate, w, prev, cur, &mut buf);
            let decay = (-cache.rate * w).exp();
            let (old, new) = cache.values[(k - 1) * d..].split_at_mut(d);
            for ((n, &o), &c) in new.iter_mut().zip(old.iter()).zip(&buf) {
                *n = o * decay + c;
            }
        }
    }

    /// Maintains the exponential moment of rate `λ > r` at every grid time
    /// from now on (and back-fills the existing grid).
    pub fn track_kernel(&mut self, lambda: T, tol: T) -> Result<()> {
        if self.kernels.iter().any(|k| k.rate == lambda) {
            return Ok(());
        }
        let d = self.dim;
        let mut values = vec![T::zero(); d * self.len()];
        self.init.kernel_integral(lambda, tol, &mut values[..d])?;
        let mut buf = vec![T::zero(); d];
        for k in 1..self.len() {
            let w = self.times[k] - self.times[k - 1];
            linear_cell_kernel(lambda, w, self.value(k - 1), self.value(k), &mut buf);
            let decay = (-lambda * w).exp();
            for i in 0..d {
                values[k * d + i] = values[(k - 1) * d + i] * decay + buf[i];
            }
        }
        self.kernels.push(KernelCache { rate: lambda, values });
        Ok(())
    }

    pub(crate) fn kernel_at_grid(&self, lambda: T, j: usize) -> Option<&[T]> {
        let d = self.dim;
        self.kernels
            .iter()
            .find(|k| k.rate == lambda)
            .map(|k| &k.values[j * d..(j + 1) * d])
    }

    /// The segment `x_t`.
    pub fn segment(&self, t: T) -> Result<SegmentView<'_, T>> {
        SegmentView::new(self, t, t)
    }

    /// The segment `θ ↦ x((t + θ) ∧ cap)`, for `0 ≤ cap ≤ t` and `cap ≤ frontier`;
    /// `t` itself may lie beyond the frontier.
    pub fn capped_segment(&self, t: T, cap: T) -> Result<SegmentView<'_, T>> {
        SegmentView::new(self, t, cap)
    }

    /// Segment at the frontier.
    pub fn frontier_segment(&self) -> SegmentView<'_, T> {
        let t = self.frontier();
        SegmentView::new(self, t, t).expect("frontier is always a valid anchor")
    }
}
