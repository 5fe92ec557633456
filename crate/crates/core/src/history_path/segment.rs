use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

use super::initial::{EnvelopeTerm, InitialData};
use super::norm::{linear_cell_kernel, linear_cell_sup, scan_norm, CellKind, Profile};
use super::path::HistoryPath;

/// Read-only view of the segment `θ ↦ x((t + θ) ∧ cap)` of a path, `θ ≤ 0`.
///
/// With `cap = t` this is the ordinary segment `x_t`; with `cap < t` it is the
/// frozen segment used inside an Euler–Maruyama step.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a, T> {
    path: &'a HistoryPath<T>,
    anchor: T,
    cap: T,
}

impl<'a, T: Scalar> SegmentView<'a, T> {
    pub(crate) fn new(path: &'a HistoryPath<T>, anchor: T, cap: T) -> Result<Self> {
        if cap > path.frontier() {
            return Err(Error::QueryBeyondFrontier {
                t: cap.as_f64(),
                frontier: path.frontier().as_f64(),
            });
        }
        if !(anchor >= T::zero() && cap >= T::zero() && cap <= anchor) {
            return Err(Error::InvalidConfig(format!(
                "segment needs 0 ≤ cap ≤ anchor, got cap = {cap}, anchor = {anchor}"
            )));
        }
        Ok(Self { path, anchor, cap })
    }

    pub fn path(&self) -> &'a HistoryPath<T> {
        self.path
    }

    pub fn anchor(&self) -> T {
        self.anchor
    }

    pub fn cap(&self) -> T {
        self.cap
    }

    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn decay(&self) -> T {
        self.path.decay()
    }

    /// `seg(θ)` for `θ ≤ 0`.
    pub fn eval(&self, theta: T, out: &mut [T]) {
        debug_assert!(theta <= T::zero());
        let s = (self.anchor + theta).min(self.cap);
        self.path.eval_unchecked(s, out);
    }

    pub fn eval_vec(&self, theta: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.eval(theta, &mut out);
        out
    }

    /// `seg(0)`.
    pub fn present(&self, out: &mut [T]) {
        self.path.eval_unchecked(self.cap, out);
    }

    /// `‖seg‖_r` with relative error at most `tol`. Uses the path's cached
    /// grid norms when `tol` is no tighter than the cache tolerance.
    pub fn fading_norm(&self, tol: T) -> Result<T> {
        if !(tol > T::zero()) {
            return Err(Error::InvalidConfig(format!("norm tolerance must be positive, got {tol}")));
        }
        if tol >= self.path.norm_tol() {
            return Ok(self.cached_norm());
        }
        self.fading_norm_scan(tol)
    }

    /// `‖seg‖_r` by a full scan of the past, ignoring the cache.
    pub fn fading_norm_scan(&self, tol: T) -> Result<T> {
        scan_norm(&self.profile(), tol)
    }

    fn plain_norm_at(&self, t: T) -> T {
        let path = self.path;
        let j = path.cell_index(t);
        let sj = path.time(j);
        if sj == t {
            return path.grid_norm(j);
        }
        let r = path.decay();
        let mut xt = vec![T::zero(); path.dim()];
        path.eval_unchecked(t, &mut xt);
        let carried = (-r * (t - sj)).exp() * path.grid_norm(j);
        let cell = linear_cell_sup(r, sj - t, T::zero(), path.value(j), &xt, carried, path.norm_tol());
        carried.max(cell)
    }

    fn cached_norm(&self) -> T {
        let at_cap = self.plain_norm_at(self.cap);
        if self.cap == self.anchor {
            return at_cap;
        }
        let mut xc = vec![T::zero(); self.dim()];
        self.present(&mut xc);
        let r = self.decay();
        ((-r * (self.anchor - self.cap)).exp() * at_cap).max(norm(&xc))
    }

    /// `∫_{-∞}^0 e^{λθ} seg(θ) dθ` for `λ > r`; exact on the grid part.
    pub fn exp_kernel_integral(&self, lambda: T, tol: T, out: &mut [T]) -> Result<()> {
        let path = self.path;
        let d = path.dim();
        if out.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: out.len(),
            });
        }
        let c = self.cap;
        let j = path.cell_index(c);
        // K(s_j)
        let mut base = vec![T::zero(); d];
        match path.kernel_at_grid(lambda, j) {
            Some(cached) => base.copy_from_slice(cached),
            None => {
                path.initial().kernel_integral(lambda, tol, &mut base)?;
                let mut cell = vec![T::zero(); d];
                for k in 1..=j {
                    let w = path.time(k) - path.time(k - 1);
                    linear_cell_kernel(lambda, w, path.value(k - 1), path.value(k), &mut cell);
                    let decay = (-lambda * w).exp();
                    for (b, &x) in base.iter_mut().zip(&cell) {
                        *b = *b * decay + x;
                    }
                }
            }
        }
        // K(c)
        let sj = path.time(j);
        let mut xc = vec![T::zero(); d];
        path.eval_unchecked(c, &mut xc);
        if c > sj {
            let mut cell = vec![T::zero(); d];
            linear_cell_kernel(lambda, c - sj, path.value(j), &xc, &mut cell);
            let decay = (-lambda * (c - sj)).exp();
            for (b, &x) in base.iter_mut().zip(&cell) {
                *b = *b * decay + x;
            }
        }
        // capped stretch on [c - t, 0] is constant x(c)
        let gap = self.anchor - c;
        let decay = (-lambda * gap).exp();
        let flat = -(-lambda * gap).exp_m1() / lambda;
        for ((o, &b), &x) in out.iter_mut().zip(&base).zip(&xc) {
            *o = b * decay + x * flat;
        }
        Ok(())
    }

    pub(crate) fn profile(&self) -> SegProfile<'a, T> {
        SegProfile {
            init: self.path.initial(),
            path: Some(self.path),
            anchor: self.anchor,
            cap: self.cap,
        }
    }

    fn same_as(&self, other: &Self) -> bool {
        std::ptr::eq(self.path, other.path) && self.anchor == other.anchor && self.cap == other.cap
    }
}

/// `‖seg‖_r` with relative error at most `tol`.
pub fn fading_norm<T: Scalar>(seg: &SegmentView<'_, T>, tol: T) -> Result<T> {
    seg.fading_norm(tol)
}

/// `‖a - b‖_r` under the same truncation contract as [`fading_norm`].
pub fn segment_distance<T: Scalar>(a: &SegmentView<'_, T>, b: &SegmentView<'_, T>, tol: T) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if a.decay() != b.decay() {
        return Err(Error::InvalidConfig(format!(
            "segments use different decay rates {} and {}",
            a.decay(),
            b.decay()
        )));
    }
    if !(tol > T::zero()) {
        return Err(Error::InvalidConfig(format!("norm tolerance must be positive, got {tol}")));
    }
    if a.same_as(b) {
        return Ok(T::zero());
    }
    scan_norm(&DiffProfile::new(a.profile(), b.profile()), tol)
}

/// Profile of a (possibly capped) segment, or of bare initial data.
#[derive(Clone, Copy)]
pub(crate) struct SegProfile<'a, T> {
    init: &'a Arc<InitialData<T>>,
    path: Option<&'a HistoryPath<T>>,
    anchor: T,
    cap: T,
}

/// Bare initial data viewed as a segment at time 0.
pub(crate) struct InitialProfile<'a, T>(SegProfile<'a, T>);

impl<'a, T: Scalar> InitialProfile<'a, T> {
    pub(crate) fn new(init: &'a Arc<InitialData<T>>) -> Self {
        Self(SegProfile {
            init,
            path: None,
            anchor: T::zero(),
            cap: T::zero(),
        })
    }
}

impl<T: Scalar> SegProfile<'_, T> {
    fn tail_start(&self) -> T {
        self.init.tail_start() - self.anchor
    }
}

impl<T: Scalar> Profile<T> for SegProfile<'_, T> {
    fn dim(&self) -> usize {
        self.init.dim()
    }

    fn decay(&self) -> T {
        self.init.decay()
    }

    fn eval(&self, theta: T, out: &mut [T]) {
        let s = (self.anchor + theta).min(self.cap);
        match self.path {
            Some(p) => p.eval_unchecked(s, out),
            None => self.init.value_at(s, out),
        }
    }

    fn breaks(&self, out: &mut Vec<T>) {
        out.clear();
        out.push(T::zero());
        let push = |x: T, out: &mut Vec<T>| {
            if x < *out.last().unwrap() {
                out.push(x);
            }
        };
        push(self.cap - self.anchor, out);
        if let Some(p) = self.path {
            let j = p.cell_index(self.cap);
            for i in (0..=j).rev() {
                push(p.time(i) - self.anchor, out);
            }
        }
        push(-self.anchor, out);
        let knots = self.init.knots();
        for &k in knots.iter().rev() {
            push(k - self.anchor, out);
        }
    }

    fn cell_kind(&self, u: T, v: T) -> CellKind<T> {
        let mid = self.anchor + (u + v) * T::lit(0.5);
        if mid >= T::zero() {
            return CellKind::Linear;
        }
        match self.init.slope_envelope(self.anchor + u) {
            None => CellKind::Linear,
            Some((slope, rate)) => CellKind::Smooth {
                slope,
                rate,
                at: self.tail_start(),
            },
        }
    }

    fn tail(&self) -> Vec<EnvelopeTerm<T>> {
        vec![self.init.envelope()]
    }
}

impl<T: Scalar> Profile<T> for InitialProfile<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn decay(&self) -> T {
        self.0.decay()
    }
    fn eval(&self, theta: T, out: &mut [T]) {
        self.0.eval(theta, out)
    }
    fn breaks(&self, out: &mut Vec<T>) {
        self.0.breaks(out)
    }
    fn cell_kind(&self, u: T, v: T) -> CellKind<T> {
        self.0.cell_kind(u, v)
    }
    fn tail(&self) -> Vec<EnvelopeTerm<T>> {
        self.0.tail()
    }
}

/// Pointwise difference of two segment profiles.
pub(crate) struct DiffProfile<'a, T> {
    a: SegProfile<'a, T>,
    b: SegProfile<'a, T>,
    /// Both sides read the same initial data at the same shift, so the
    /// difference vanishes left of `-anchor`.
    shared_past: bool,
    scale: T,
}

impl<'a, T: Scalar> DiffProfile<'a, T> {
    fn new(a: SegProfile<'a, T>, b: SegProfile<'a, T>) -> Self {
        let shared_past = Arc::ptr_eq(a.init, b.init) && a.anchor == b.anchor;
        let mut fa = vec![T::zero(); a.dim()];
        let mut fb = vec![T::zero(); b.dim()];
        a.eval(T::zero(), &mut fa);
        b.eval(T::zero(), &mut fb);
        let scale = norm(&fa) + norm(&fb) + a.init.envelope().bound + b.init.envelope().bound;
        Self {
            a,
            b,
            shared_past,
            scale,
        }
    }

    /// One side's slope envelope re-anchored at `v`: `(slope at v, rate)`.
    fn side_slope(&self, side: &SegProfile<'a, T>, u: T, v: T) -> Option<(T, T)> {
        match side.cell_kind(u, v) {
            CellKind::Linear => None,
            CellKind::Smooth { slope, rate, at } => Some((slope * (rate * (at - v)).exp(), rate)),
        }
    }
}

impl<T: Scalar> Profile<T> for DiffProfile<'_, T> {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn decay(&self) -> T {
        self.a.decay()
    }

    fn eval(&self, theta: T, out: &mut [T]) {
        let mut tmp = vec![T::zero(); out.len()];
        self.a.eval(theta, out);
        self.b.eval(theta, &mut tmp);
        for (o, &x) in out.iter_mut().zip(&tmp) {
            *o = *o - x;
        }
    }

    fn breaks(&self, out: &mut Vec<T>) {
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        self.a.breaks(&mut ba);
        self.b.breaks(&mut bb);
        out.clear();
        let (mut i, mut j) = (0, 0);
        while i < ba.len() || j < bb.len() {
            let next = match (ba.get(i), bb.get(j)) {
                (Some(&x), Some(&y)) if x >= y => {
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
            if out.last().is_none_or(|&l| next < l) {
                out.push(next);
            }
        }
        if self.shared_past {
            let cut = -self.a.anchor;
            out.retain(|&x| x >= cut);
            if *out.last().unwrap() > cut {
                out.push(cut);
            }
        }
    }

    fn cell_kind(&self, u: T, v: T) -> CellKind<T> {
        let sa = self.side_slope(&self.a, u, v);
        let sb = self.side_slope(&self.b, u, v);
        if sa.is_none() && sb.is_none() {
            return CellKind::Linear;
        }
        let linear_slope = |side: &SegProfile<'_, T>| {
            let mut fu = vec![T::zero(); side.dim()];
            let mut fv = vec![T::zero(); side.dim()];
            side.eval(u, &mut fu);
            side.eval(v, &mut fv);
            crate::scalar::dist(&fu, &fv) / (v - u)
        };
        let (sa, ra) = sa.unwrap_or_else(|| (linear_slope(&self.a), T::zero()));
        let (sb, rb) = sb.unwrap_or_else(|| (linear_slope(&self.b), T::zero()));
        CellKind::Smooth {
            slope: sa + sb,
            rate: ra.max(rb).max(T::zero()),
            at: v,
        }
    }

    fn tail(&self) -> Vec<EnvelopeTerm<T>> {
        if self.shared_past {
            return Vec::new();
        }
        let start = self.a.tail_start().min(self.b.tail_start());
        [(&self.a, self.a.tail_start()), (&self.b, self.b.tail_start())]
            .into_iter()
            .map(|(side, own)| {
                let t = side.init.envelope();
                let grow = (t.rate * (own - start)).exp();
                EnvelopeTerm {
                    rate: t.rate,
                    bound: t.bound * grow,
                    slope: t.slope * grow,
                }
            })
            .collect()
    }

    fn abs_floor(&self, tol: T) -> T {
        tol * T::lit(1e-6) * self.scale
    }
}
