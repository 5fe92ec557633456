//! Coefficient triples `(D, b, σ)` acting on segments.

pub mod builtin;
pub mod checks;
pub mod sampler;

use crate::error::Result;
use crate::history_path::SegmentView;
use crate::scalar::Scalar;

/// An autonomous neutral functional SDE
/// `d[x(t) - D(x_t)] = b(x_t) dt + σ(x_t) dw(t)` on `R^d` driven by an
/// `m`-dimensional Brownian motion.
///
/// Coefficients must be pure functions of the segment.
pub trait Model<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// Decay rate `r` of the state space norm.
    fn decay(&self) -> T;

    /// Declared contraction constant `k` of the neutral term.
    fn contraction(&self) -> T;

    /// Declared coercivity constant `L`.
    fn coercivity(&self) -> T;

    /// Neutral term `D(φ) ∈ R^d`.
    fn neutral(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()>;

    /// Drift `b(φ) ∈ R^d`.
    fn drift(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()>;

    /// Diffusion `σ(φ) ∈ R^{d×m}`, row-major.
    fn diffusion(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()>;

    /// `D ≡ 0`; lets the integrator skip the fixed-point solve.
    fn neutral_is_zero(&self) -> bool {
        false
    }

    /// Exponential kernel rates the neutral term integrates against; paths
    /// cache running moments for these.
    fn kernel_rates(&self) -> Vec<T> {
        Vec::new()
    }

    /// Upper bound on `sup_{‖ζ‖_r ≤ radius} |b(ζ)|`, when known.
    fn drift_bound(&self, radius: T) -> Option<T> {
        let _ = radius;
        None
    }

    fn name(&self) -> &str {
        "custom"
    }
}

impl<T: Scalar, M: Model<T> + ?Sized> Model<T> for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn noise_dim(&self) -> usize {
        (**self).noise_dim()
    }
    fn decay(&self) -> T {
        (**self).decay()
    }
    fn contraction(&self) -> T {
        (**self).contraction()
    }
    fn coercivity(&self) -> T {
        (**self).coercivity()
    }
    fn neutral(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        (**self).neutral(seg, out)
    }
    fn drift(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        (**self).drift(seg, out)
    }
    fn diffusion(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        (**self).diffusion(seg, out)
    }
    fn neutral_is_zero(&self) -> bool {
        (**self).neutral_is_zero()
    }
    fn kernel_rates(&self) -> Vec<T> {
        (**self).kernel_rates()
    }
    fn drift_bound(&self, radius: T) -> Option<T> {
        (**self).drift_bound(radius)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}
