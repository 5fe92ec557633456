//! Weighted sup-norm machinery: per-cell maximisation of `e^{rθ}|f(θ)|` with
//! an analytic over-estimate, and the scan over a whole segment including its
//! infinite past.

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

use super::initial::EnvelopeTerm;

/// Hard cap on bisection depth inside one cell.
const MAX_DEPTH: u32 = 64;
/// Hard cap on tail cells visited before giving up on the envelope test.
const MAX_TAIL_CELLS: usize = 256;
/// Tail cells scanned before giving up on an envelope that does not decay.
const FLAT_TAIL_CELLS: usize = 6;

/// Over-estimate of `sup_{s∈[u,v]} e^{rs} ℓ(s)` where `ℓ` interpolates the
/// endpoint magnitudes linearly. Because `|·|` of an affine map is convex,
/// `ℓ ≥ |f|` on the cell.
fn convex_bound<T: Scalar>(r: T, u: T, v: T, nu: T, nv: T) -> T {
    let w = v - u;
    let beta = (nv - nu) / w;
    if beta >= T::zero() {
        return (r * v).exp() * nv;
    }
    let s_star = u + nu / (-beta) - T::one() / r;
    if s_star <= u {
        (r * u).exp() * nu
    } else if s_star >= v {
        (r * v).exp() * nv
    } else {
        (r * s_star).exp() * (-beta / r)
    }
}

/// How the function behaves on a cell free of breakpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum CellKind<T> {
    /// Affine between the endpoints.
    Linear,
    /// Arbitrary, with `|f'(θ)| ≤ slope·e^{rate (at - θ)}` on the cell.
    Smooth { slope: T, rate: T, at: T },
}

impl<T: Scalar> CellKind<T> {
    /// Bound on `|f'|` over `[a, b]`; `None` for affine cells.
    pub(crate) fn slope_on(&self, a: T, b: T) -> Option<T> {
        match *self {
            CellKind::Linear => None,
            CellKind::Smooth { slope, rate, at } => {
                Some(slope * (rate * (at - a)).exp().max((rate * (at - b)).exp()))
            }
        }
    }
}

/// Largest attained value of `e^{rθ}|f(θ)|` over sampled points of `[u, v]`,
/// refined by bisection until every sub-cell's analytic over-estimate is
/// within `(1 + tol)` of `max(best, floor)`, or below `abs_floor`.
///
/// `mid` evaluates `f` at a point inside the cell given the bracketing values
/// (for affine cells the average is exact).
#[allow(clippy::too_many_arguments)]
pub(crate) fn cell_sup<T: Scalar, M>(
    r: T,
    u: T,
    v: T,
    fu: &[T],
    fv: &[T],
    kind: CellKind<T>,
    floor: T,
    abs_floor: T,
    tol: T,
    mut mid: M,
) -> T
where
    M: FnMut(T, &[T], &[T], &mut [T]),
{
    let d = fu.len();
    let nu = norm(fu);
    let nv = norm(fv);
    let mut best = ((r * u).exp() * nu).max((r * v).exp() * nv);
    let over = |a: T, b: T, na: T, nb: T| match kind.slope_on(a, b) {
        None => convex_bound(r, a, b, na, nb),
        Some(slope) => (r * b).exp() * (na.max(nb) + slope * (b - a) * T::lit(0.5)),
    };
    let accept = |bound: T, best: T| bound <= best.max(floor) * (T::one() + tol) || bound <= abs_floor;
    if accept(over(u, v, nu, nv), best) {
        return best;
    }
    // arena of endpoint vectors; stack entries index into it
    let mut arena: Vec<T> = Vec::with_capacity(8 * d);
    arena.extend_from_slice(fu);
    arena.extend_from_slice(fv);
    let mut stack: Vec<(T, T, usize, usize, T, T, u32)> = vec![(u, v, 0, 1, nu, nv, 0)];
    let mut scratch = vec![T::zero(); d];
    while let Some((a, b, ia, ib, na, nb, depth)) = stack.pop() {
        if accept(over(a, b, na, nb), best) || depth >= MAX_DEPTH {
            continue;
        }
        let c = (a + b) * T::lit(0.5);
        {
            let (fa, fb) = (&arena[ia * d..(ia + 1) * d], &arena[ib * d..(ib + 1) * d]);
            mid(c, fa, fb, &mut scratch);
        }
        let nc = norm(&scratch);
        best = best.max((r * c).exp() * nc);
        let ic = arena.len() / d;
        arena.extend_from_slice(&scratch);
        stack.push((a, c, ia, ic, na, nc, depth + 1));
        stack.push((c, b, ic, ib, nc, nb, depth + 1));
    }
    best
}

/// `cell_sup` for an affine cell, where the midpoint is the endpoint average.
pub(crate) fn linear_cell_sup<T: Scalar>(r: T, u: T, v: T, fu: &[T], fv: &[T], floor: T, tol: T) -> T {
    cell_sup(r, u, v, fu, fv, CellKind::Linear, floor, T::zero(), tol, |_, a, b, out| {
        for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
            *o = (x + y) * T::lit(0.5);
        }
    })
}

/// `(q + expm1(-q)) / q`, accurate for small `q`.
fn phi1<T: Scalar>(q: T) -> T {
    if q < T::lit(0.05) {
        // q/2 - q²/6 + q³/24 - q⁴/120 + q⁵/720
        let c = [1.0 / 2.0, -1.0 / 6.0, 1.0 / 24.0, -1.0 / 120.0, 1.0 / 720.0, -1.0 / 5040.0];
        c.iter().rev().fold(T::zero(), |acc, &k| acc * q + T::lit(k)) * q
    } else {
        (q + (-q).exp_m1()) / q
    }
}

/// `∫_{-w}^{0} e^{λθ} f(θ) dθ` for `f` affine from `fu` (at `-w`) to `fv` (at 0).
pub(crate) fn linear_cell_kernel<T: Scalar>(lambda: T, w: T, fu: &[T], fv: &[T], out: &mut [T]) {
    let q = lambda * w;
    let i0 = -(-q).exp_m1() / lambda;
    let i1 = phi1(q) / lambda;
    for ((o, &a), &b) in out.iter_mut().zip(fu).zip(fv) {
        *o = a * (i0 - i1) + b * i1;
    }
}

/// A function on `(-∞, 0]` presented for weighted sup-norm evaluation.
pub(crate) trait Profile<T: Scalar> {
    fn dim(&self) -> usize;
    fn decay(&self) -> T;
    fn eval(&self, theta: T, out: &mut [T]);
    /// Breakpoints, strictly decreasing, from `0` down to the tail start.
    fn breaks(&self, out: &mut Vec<T>);
    fn cell_kind(&self, u: T, v: T) -> CellKind<T>;
    /// Envelope terms valid left of the last breakpoint, anchored there.
    fn tail(&self) -> Vec<EnvelopeTerm<T>>;
    /// Absolute level under which a cell is considered resolved.
    fn abs_floor(&self, tol: T) -> T {
        let _ = tol;
        T::zero()
    }
}

fn envelope_at<T: Scalar>(r: T, start: T, u: T, terms: &[EnvelopeTerm<T>]) -> T {
    terms.iter().fold(T::zero(), |acc, t| {
        acc + t.bound * (r * start).exp() * ((r - t.rate) * (u - start)).exp()
    })
}

/// Slope envelope of the tail on `θ ≤ v`, folded into one exponential
/// anchored at `v` with the largest rate.
fn tail_kind<T: Scalar>(start: T, v: T, terms: &[EnvelopeTerm<T>]) -> CellKind<T> {
    let slope = terms
        .iter()
        .fold(T::zero(), |acc, t| acc + t.slope * (-t.rate * (v - start)).exp());
    if slope.is_zero() {
        return CellKind::Linear;
    }
    let rate = terms.iter().fold(T::zero(), |acc, t| acc.max(t.rate));
    CellKind::Smooth { slope, rate, at: v }
}

/// Weighted sup-norm of a profile by a full scan: every cell between
/// breakpoints, then the tail in geometrically growing cells until the
/// envelope can no longer beat the running maximum.
pub(crate) fn scan_norm<T: Scalar, P: Profile<T>>(p: &P, tol: T) -> Result<T> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidConfig(format!("norm tolerance must be positive, got {tol}")));
    }
    let r = p.decay();
    let d = p.dim();
    let abs_floor = p.abs_floor(tol);
    let mut breaks = Vec::new();
    p.breaks(&mut breaks);
    debug_assert!(!breaks.is_empty() && breaks[0] == T::zero());

    let mut fv = vec![T::zero(); d];
    let mut fu = vec![T::zero(); d];
    p.eval(breaks[0], &mut fv);
    let mut running = norm(&fv);
    for w in breaks.windows(2) {
        let (v, u) = (w[0], w[1]);
        p.eval(u, &mut fu);
        let kind = p.cell_kind(u, v);
        let sup = cell_sup(r, u, v, &fu, &fv, kind, running, abs_floor, tol, |c, a, b, out| match kind {
            CellKind::Linear => {
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o = (x + y) * T::lit(0.5);
                }
            }
            CellKind::Smooth { .. } => p.eval(c, out),
        });
        running = running.max(sup);
        std::mem::swap(&mut fu, &mut fv);
    }

    let terms = p.tail();
    if terms.iter().any(|t| t.rate > r) {
        return Err(Error::NonFiniteNorm(
            "tail grows faster than the weight decays".into(),
        ));
    }
    let start = *breaks.last().unwrap();
    let mut v = start;
    // fv holds f(start) after the loop
    let mut width = T::one() / r;
    let resolved = |env: T, running: T| env <= running * (T::one() + tol) || env <= abs_floor || !env.is_normal();
    // part of the envelope that never decays under the weight
    let flat: T = terms
        .iter()
        .filter(|t| t.rate >= r)
        .fold(T::zero(), |acc, t| acc + t.bound * (r * start).exp());
    let mut certified = false;
    for cell in 0..MAX_TAIL_CELLS {
        let env = envelope_at(r, start, v, &terms);
        if resolved(env, running) {
            certified = true;
            break;
        }
        if cell >= FLAT_TAIL_CELLS && !resolved(flat, running) {
            break;
        }
        let u = v - width;
        p.eval(u, &mut fu);
        let kind = tail_kind(start, v, &terms);
        let sup = cell_sup(r, u, v, &fu, &fv, kind, running, abs_floor, tol, |c, a, b, out| match kind {
            CellKind::Linear => {
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o = (x + y) * T::lit(0.5);
                }
            }
            CellKind::Smooth { .. } => p.eval(c, out),
        });
        running = running.max(sup);
        std::mem::swap(&mut fu, &mut fv);
        v = u;
        width = width + width;
    }
    if !certified {
        return Err(Error::NonFiniteNorm(
            "declared tail envelope does not decay below the attained maximum; declare a growth rate below r"
                .into(),
        ));
    }
    if !running.is_finite() {
        return Err(Error::NonFiniteNorm(format!("scan produced {running}")));
    }
    Ok(running)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_sup(r: f64, u: f64, v: f64, f: impl Fn(f64) -> f64) -> f64 {
        let n = 200_000;
        (0..=n)
            .map(|i| {
                let s = u + (v - u) * i as f64 / n as f64;
                (r * s).exp() * f(s).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn convex_bound_dominates_linear_profile() {
        for &(nu, nv) in &[(3.0, 0.1), (1.0, 1.0), (0.0, 2.0), (5.0, 0.0)] {
            let (u, v, r) = (-0.7, -0.2, 1.3);
            let exact = dense_sup(r, u, v, |s| nu + (nv - nu) * (s - u) / (v - u));
            let bound = convex_bound(r, u, v, nu, nv);
            assert!(bound >= exact - 1e-12, "{bound} < {exact}");
            assert!(bound <= exact * (1.0 + 1e-6) + 1e-12);
        }
    }

    #[test]
    fn linear_cell_sup_finds_interior_maximum() {
        // f(θ) = θ on [-10, 0] with r = 1: max e^{θ}|θ| = e^{-1} at θ = -1
        let got = linear_cell_sup(1.0, -10.0, 0.0, &[-10.0], &[0.0], 0.0, 1e-10);
        assert!((got - (-1.0f64).exp()).abs() < 1e-9, "{got}");
    }

    #[test]
    fn linear_cell_sup_vector_with_cancellation() {
        // passes close to the origin: f(θ) = (θ + 0.5, 0.01)
        let got = linear_cell_sup(2.0, -1.0, 0.0, &[-0.5, 0.01], &[0.5, 0.01], 0.0, 1e-9);
        let exact = dense_sup(2.0, -1.0, 0.0, |s| ((s + 0.5).powi(2) + 1e-4).sqrt());
        assert!((got - exact).abs() <= 1e-8 * exact + 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn kernel_cell_matches_quadrature() {
        let lambda = 2.0;
        for &w in &[1e-4, 0.01, 0.3, 2.0] {
            let mut out = [0.0];
            linear_cell_kernel(lambda, w, &[1.5], &[-0.5], &mut out);
            let n = 100_000;
            let h = w / n as f64;
            let f = |t: f64| (lambda * t).exp() * (1.5 + (-0.5 - 1.5) * (t + w) / w);
            // composite Simpson
            let mut acc = f(-w) + f(0.0);
            for i in 1..n {
                let t = -w + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
            }
            let simpson = acc * h / 3.0;
            assert!((out[0] - simpson).abs() < 1e-12 * (1.0 + simpson.abs()), "w={w}: {} vs {simpson}", out[0]);
        }
    }
}
