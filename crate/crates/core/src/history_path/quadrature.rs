//! Adaptive Gauss–Legendre quadrature for exponentially weighted integrals
//! of closed-form initial functions over `(-∞, 0]`.

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

use super::initial::GrowthBound;

#[allow(clippy::excessive_precision)]
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
#[allow(clippy::excessive_precision)]
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

const MAX_DEPTH: usize = 40;
const MAX_PANELS: usize = 200;

fn gauss8<T: Scalar, F: Fn(T, &mut [T])>(
    f: &F,
    lambda: T,
    a: T,
    b: T,
    buf: &mut [T],
    out: &mut [T],
) {
    let half = (b - a) * T::lit(0.5);
    let mid = (a + b) * T::lit(0.5);
    out.iter_mut().for_each(|o| *o = T::zero());
    for (&x, &w) in GL_NODES.iter().zip(&GL_WEIGHTS) {
        for sign in [-1.0, 1.0] {
            let theta = mid + half * T::lit(sign * x);
            f(theta, buf);
            let weight = T::lit(w) * half * (lambda * theta).exp();
            for (o, &v) in out.iter_mut().zip(buf.iter()) {
                *o = *o + v * weight;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive<T: Scalar, F: Fn(T, &mut [T])>(
    f: &F,
    lambda: T,
    a: T,
    b: T,
    whole: &[T],
    tol: T,
    depth: usize,
    out: &mut [T],
) {
    let d = whole.len();
    let mid = (a + b) * T::lit(0.5);
    let mut buf = vec![T::zero(); d];
    let mut left = vec![T::zero(); d];
    let mut right = vec![T::zero(); d];
    gauss8(f, lambda, a, mid, &mut buf, &mut left);
    gauss8(f, lambda, mid, b, &mut buf, &mut right);
    let err = left
        .iter()
        .zip(&right)
        .zip(whole)
        .fold(T::zero(), |acc, ((&l, &r), &w)| acc + (l + r - w) * (l + r - w))
        .sqrt();
    if err <= tol || depth >= MAX_DEPTH {
        for ((o, &l), &r) in out.iter_mut().zip(&left).zip(&right) {
            *o = *o + l + r;
        }
        return;
    }
    let half_tol = tol * T::lit(0.5);
    adaptive(f, lambda, a, mid, &left, half_tol, depth + 1, out);
    adaptive(f, lambda, mid, b, &right, half_tol, depth + 1, out);
}

/// `∫_{-∞}^0 e^{λθ} f(θ) dθ`, truncated where the growth envelope guarantees
/// the remainder is below `tol` relative to the accumulated value.
pub(crate) fn exp_weighted_integral<T: Scalar, F: Fn(T, &mut [T])>(
    dim: usize,
    f: F,
    lambda: T,
    bound: GrowthBound<T>,
    tol: T,
    out: &mut [T],
) -> Result<()> {
    let excess = lambda - bound.rate;
    if !(excess > T::zero()) {
        return Err(Error::NonFiniteNorm(format!(
            "kernel rate {lambda} does not dominate growth rate {}",
            bound.rate
        )));
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    let mut panel = vec![T::zero(); dim];
    let mut buf = vec![T::zero(); dim];
    let mut right = T::zero();
    let mut width = T::one() / lambda;
    let floor = bound.scale / excess * tol;
    for _ in 0..MAX_PANELS {
        let left = right - width;
        gauss8(&f, lambda, left, right, &mut buf, &mut panel);
        let panel_tol = tol * (norm(&panel) + floor);
        adaptive(&f, lambda, left, right, &panel, panel_tol, 0, out);
        right = left;
        width = width + width;
        let remainder = bound.scale * (excess * right).exp() / excess;
        if remainder <= tol * norm(out).max(floor) {
            return Ok(());
        }
    }
    Ok(())
}
