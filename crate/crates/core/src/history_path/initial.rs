use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

use super::quadrature;

/// Continuation of a sampled table to the left of its first knot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailRule<T> {
    /// φ(θ) = φ(θ_min) for θ < θ_min.
    Constant,
    /// φ(θ) = φ(θ_min)·e^{-rate (θ - θ_min)} for θ < θ_min.
    Exponential { rate: T },
}

/// Declared envelope of a closed-form initial function on `(-∞, 0]`:
/// `|φ(θ)| ≤ scale·e^{-rate θ}` and `|φ'(θ)| ≤ slope·e^{-rate θ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthBound<T> {
    pub scale: T,
    pub slope: T,
    pub rate: T,
}

pub type InitialFn<T> = Arc<dyn Fn(T, &mut [T]) + Send + Sync>;

#[derive(Clone)]
pub(crate) enum Descriptor<T> {
    Constant(Vec<T>),
    Table {
        knots: Vec<T>,
        values: Vec<T>,
        tail: TailRule<T>,
    },
    Function {
        f: InitialFn<T>,
        bound: GrowthBound<T>,
    },
}

/// One term `B·e^{-α(θ - θ_t)}` of an envelope valid for `θ ≤ θ_t`, together
/// with the matching derivative bound `D·e^{-α(θ - θ_t)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EnvelopeTerm<T> {
    pub rate: T,
    pub bound: T,
    pub slope: T,
}

/// Initial segment ξ on `(-∞, 0]` together with the decay rate `r` of the
/// weighted norm it is measured in.
#[derive(Clone)]
pub struct InitialData<T> {
    dim: usize,
    decay: T,
    pub(crate) desc: Descriptor<T>,
}

impl<T: fmt::Debug> fmt::Debug for InitialData<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.desc {
            Descriptor::Constant(c) => format!("Constant({c:?})"),
            Descriptor::Table { knots, tail, .. } => {
                format!("Table({} knots, {tail:?})", knots.len())
            }
            Descriptor::Function { bound, .. } => format!("Function({bound:?})"),
        };
        f.debug_struct("InitialData")
            .field("dim", &self.dim)
            .field("decay", &self.decay)
            .field("descriptor", &kind)
            .finish()
    }
}

fn check_decay<T: Scalar>(r: T) -> Result<()> {
    if !(r > T::zero() && r.is_finite()) {
        return Err(Error::InvalidInitialData(format!(
            "decay rate r must be positive and finite, got {r}"
        )));
    }
    Ok(())
}

fn check_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInitialData(format!("{what} contains non-finite values")));
    }
    Ok(())
}

impl<T: Scalar> InitialData<T> {
    pub fn constant(value: Vec<T>, r: T) -> Result<Self> {
        check_decay(r)?;
        if value.is_empty() {
            return Err(Error::InvalidInitialData("dimension must be positive".into()));
        }
        check_finite(&value, "constant value")?;
        Ok(Self {
            dim: value.len(),
            decay: r,
            desc: Descriptor::Constant(value),
        })
    }

    /// Piecewise-linear table through `(knots[i], values[i])`. Knots must be
    /// strictly increasing and end at `0`.
    pub fn table(knots: Vec<T>, values: Vec<Vec<T>>, tail: TailRule<T>, r: T) -> Result<Self> {
        check_decay(r)?;
        if knots.is_empty() || knots.len() != values.len() {
            return Err(Error::InvalidInitialData(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInitialData("knots must be strictly increasing".into()));
        }
        if *knots.last().unwrap() != T::zero() {
            return Err(Error::InvalidInitialData("last knot must be θ = 0".into()));
        }
        check_finite(&knots, "knots")?;
        let dim = values[0].len();
        if dim == 0 {
            return Err(Error::InvalidInitialData("dimension must be positive".into()));
        }
        let mut flat = Vec::with_capacity(dim * values.len());
        for v in &values {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            flat.extend_from_slice(v);
        }
        check_finite(&flat, "table values")?;
        if let TailRule::Exponential { rate } = tail {
            if !rate.is_finite() || rate > r {
                return Err(Error::InvalidInitialData(format!(
                    "exponential tail e^(-{rate}θ) has infinite weighted norm for r = {r}"
                )));
            }
        }
        Ok(Self {
            dim,
            decay: r,
            desc: Descriptor::Table {
                knots,
                values: flat,
                tail,
            },
        })
    }

    /// Closed-form initial function with a declared growth envelope.
    pub fn function<F>(dim: usize, f: F, bound: GrowthBound<T>, r: T) -> Result<Self>
    where
        F: Fn(T, &mut [T]) + Send + Sync + 'static,
    {
        check_decay(r)?;
        if dim == 0 {
            return Err(Error::InvalidInitialData("dimension must be positive".into()));
        }
        if !(bound.scale >= T::zero() && bound.slope >= T::zero() && bound.rate.is_finite()) {
            return Err(Error::InvalidInitialData(format!("malformed growth bound {bound:?}")));
        }
        if bound.rate > r {
            return Err(Error::InvalidInitialData(format!(
                "growth rate {} exceeds r = {r}; weighted norm would be infinite",
                bound.rate
            )));
        }
        Ok(Self {
            dim,
            decay: r,
            desc: Descriptor::Function {
                f: Arc::new(f),
                bound,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    /// Evaluates ξ(θ) for θ ≤ 0.
    pub fn value_at(&self, theta: T, out: &mut [T]) {
        debug_assert!(theta <= T::zero());
        match &self.desc {
            Descriptor::Constant(c) => out.copy_from_slice(c),
            Descriptor::Function { f, .. } => f(theta, out),
            Descriptor::Table {
                knots,
                values,
                tail,
            } => {
                let d = self.dim;
                if theta <= knots[0] {
                    let left = &values[..d];
                    let factor = match *tail {
                        TailRule::Constant => T::one(),
                        TailRule::Exponential { rate } => (-rate * (theta - knots[0])).exp(),
                    };
                    for (o, &v) in out.iter_mut().zip(left) {
                        *o = v * factor;
                    }
                    return;
                }
                // first knot strictly greater than theta
                let hi = knots.partition_point(|&k| k < theta).min(knots.len() - 1);
                let lo = hi - 1;
                let w = (theta - knots[lo]) / (knots[hi] - knots[lo]);
                let a = &values[lo * d..(lo + 1) * d];
                let b = &values[hi * d..(hi + 1) * d];
                for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
                    *o = x + (y - x) * w;
                }
            }
        }
    }

    pub fn value_vec(&self, theta: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.value_at(theta, &mut out);
        out
    }

    /// Knots of the piecewise-linear part, ascending, ending at 0. Empty for
    /// constant and closed-form descriptors.
    pub(crate) fn knots(&self) -> &[T] {
        match &self.desc {
            Descriptor::Table { knots, .. } => knots,
            _ => &[],
        }
    }

    /// Start of the region described by an envelope (in initial coordinates).
    pub(crate) fn tail_start(&self) -> T {
        match &self.desc {
            Descriptor::Table { knots, .. } => knots[0],
            _ => T::zero(),
        }
    }

    /// True when the initial data is affine on every cell between knots and
    /// on the tail.
    pub(crate) fn tail_is_linear(&self) -> bool {
        match &self.desc {
            Descriptor::Constant(_) => true,
            Descriptor::Table { tail, .. } => matches!(tail, TailRule::Constant),
            Descriptor::Function { .. } => false,
        }
    }

    /// Envelope of |ξ| on `θ ≤ tail_start()`, anchored at `tail_start()`.
    pub(crate) fn envelope(&self) -> EnvelopeTerm<T> {
        match &self.desc {
            Descriptor::Constant(c) => EnvelopeTerm {
                rate: T::zero(),
                bound: norm(c),
                slope: T::zero(),
            },
            Descriptor::Table { values, tail, .. } => {
                let left = norm(&values[..self.dim]);
                match *tail {
                    TailRule::Constant => EnvelopeTerm {
                        rate: T::zero(),
                        bound: left,
                        slope: T::zero(),
                    },
                    TailRule::Exponential { rate } => EnvelopeTerm {
                        rate,
                        bound: left,
                        slope: rate.abs() * left,
                    },
                }
            }
            Descriptor::Function { bound, .. } => EnvelopeTerm {
                rate: bound.rate,
                bound: bound.scale,
                slope: bound.slope,
            },
        }
    }

    /// `(S, ρ)` with `|ξ'(x)| ≤ S·e^{-ρ (x - tail_start())}` on a cell whose
    /// left end is `u`, or `None` when ξ is affine there.
    pub(crate) fn slope_envelope(&self, u: T) -> Option<(T, T)> {
        match &self.desc {
            Descriptor::Constant(_) => None,
            Descriptor::Table { .. } if u >= self.tail_start() || self.tail_is_linear() => None,
            _ => {
                let env = self.envelope();
                Some((env.slope, env.rate))
            }
        }
    }

    /// `∫_{-∞}^0 e^{λθ} ξ(θ) dθ` for `λ > r`.
    pub fn kernel_integral(&self, lambda: T, tol: T, out: &mut [T]) -> Result<()> {
        if !(lambda > self.decay) {
            return Err(Error::InvalidModel(format!(
                "kernel rate {lambda} must exceed r = {}",
                self.decay
            )));
        }
        match &self.desc {
            Descriptor::Constant(c) => {
                for (o, &x) in out.iter_mut().zip(c) {
                    *o = x / lambda;
                }
            }
            Descriptor::Table {
                knots,
                values,
                tail,
            } => {
                let d = self.dim;
                out.iter_mut().for_each(|o| *o = T::zero());
                let mut cell = vec![T::zero(); d];
                for i in 0..knots.len() - 1 {
                    let (u, v) = (knots[i], knots[i + 1]);
                    super::norm::linear_cell_kernel(
                        lambda,
                        v - u,
                        &values[i * d..(i + 1) * d],
                        &values[(i + 1) * d..(i + 2) * d],
                        &mut cell,
                    );
                    let scale = (lambda * v).exp();
                    for (o, &c) in out.iter_mut().zip(&cell) {
                        *o = *o + c * scale;
                    }
                }
                let rate = match *tail {
                    TailRule::Constant => T::zero(),
                    TailRule::Exponential { rate } => rate,
                };
                let scale = (lambda * knots[0]).exp() / (lambda - rate);
                for (o, &x) in out.iter_mut().zip(&values[..d]) {
                    *o = *o + x * scale;
                }
            }
            Descriptor::Function { f, bound } => {
                quadrature::exp_weighted_integral(
                    self.dim,
                    |theta, buf| f(theta, buf),
                    lambda,
                    *bound,
                    tol,
                    out,
                )?;
            }
        }
        Ok(())
    }
}
