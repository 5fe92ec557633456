//! The built-in linear delay family
//!
//! ```text
//! b(φ) = c + A φ(0) + B φ(-τ)
//! σ(φ) e_j = Σ₀ e_j + S_j φ(0)        (column j, j < m)
//! ```
//!
//! with one of three neutral terms: none, a point delay `κ φ(-τ)`, or a
//! fading average `κ (λ - r) ∫ e^{λθ} φ(θ) dθ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::history_path::SegmentView;
use crate::linalg::Matrix;
use crate::scalar::{norm, Scalar};

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NeutralTerm<T> {
    /// `D ≡ 0`.
    Zero,
    /// `D(φ) = κ φ(-τ)`; contraction constant `|κ| e^{rτ}`.
    PointDelay { kappa: T },
    /// `D(φ) = κ (λ - r) ∫_{-∞}^0 e^{λθ} φ(θ) dθ` with `λ > r`; contraction
    /// constant `|κ|`.
    FadingAverage { kappa: T, rate: T },
}

/// Parameters of [`LinearNeutralModel`]. Matrices are `d×d` except `sigma0`
/// (`d×m`); `sigma1` holds one `d×d` matrix per noise column.
#[derive(Debug, Clone)]
pub struct LinearParams<T> {
    pub r: T,
    pub tau: T,
    pub neutral: NeutralTerm<T>,
    pub offset: Vec<T>,
    pub a: Matrix<T>,
    pub b_delay: Matrix<T>,
    pub sigma0: Matrix<T>,
    pub sigma1: Vec<Matrix<T>>,
    /// Declared coercivity constant; `None` uses the analytic bound.
    pub coercivity: Option<T>,
    /// Tolerance of the fading-average quadrature over closed-form pasts.
    pub quad_tol: T,
}

impl<T: Scalar> LinearParams<T> {
    /// Zero coefficients in dimension `d` with `m` noise channels.
    pub fn zeros(d: usize, m: usize, r: T) -> Self {
        Self {
            r,
            tau: T::one(),
            neutral: NeutralTerm::Zero,
            offset: vec![T::zero(); d],
            a: Matrix::zeros(d, d),
            b_delay: Matrix::zeros(d, d),
            sigma0: Matrix::zeros(d, m),
            sigma1: Vec::new(),
            coercivity: None,
            quad_tol: T::lit(1e-12),
        }
    }

    /// `S_j = s·e_j e_jᵀ`: component `j` of the state multiplies noise `j`.
    pub fn diagonal_multiplicative(d: usize, m: usize, s: T) -> Vec<Matrix<T>> {
        (0..m)
            .map(|j| {
                let mut rows = vec![vec![T::zero(); d]; d];
                if j < d {
                    rows[j][j] = s;
                }
                Matrix::from_rows(&rows).expect("non-empty")
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct LinearNeutralModel<T> {
    params: LinearParams<T>,
    d: usize,
    m: usize,
    k: T,
    l: T,
}

impl<T: Scalar> LinearNeutralModel<T> {
    pub fn new(params: LinearParams<T>) -> Result<Self> {
        let d = params.a.rows();
        let m = params.sigma0.cols();
        let p = &params;
        if !(p.r > T::zero() && p.r.is_finite()) {
            return Err(Error::InvalidModel(format!("r must be positive, got {}", p.r)));
        }
        if !(p.tau >= T::zero() && p.tau.is_finite()) {
            return Err(Error::InvalidModel(format!("τ must be non-negative, got {}", p.tau)));
        }
        let square = |mat: &Matrix<T>, name: &str| -> Result<()> {
            if mat.rows() != d || mat.cols() != d {
                return Err(Error::InvalidModel(format!(
                    "{name} must be {d}×{d}, got {}×{}",
                    mat.rows(),
                    mat.cols()
                )));
            }
            Ok(())
        };
        square(&p.a, "A")?;
        square(&p.b_delay, "B")?;
        if p.sigma0.rows() != d {
            return Err(Error::InvalidModel(format!("Σ₀ must have {d} rows")));
        }
        if p.offset.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: p.offset.len(),
            });
        }
        if !p.sigma1.is_empty() && p.sigma1.len() != m {
            return Err(Error::InvalidModel(format!(
                "Σ₁ needs one matrix per noise column ({m}), got {}",
                p.sigma1.len()
            )));
        }
        for s in &p.sigma1 {
            square(s, "Σ₁ block")?;
        }
        let k = match p.neutral {
            NeutralTerm::Zero => T::zero(),
            NeutralTerm::PointDelay { kappa } => {
                let k = kappa.abs() * (p.r * p.tau).exp();
                if k >= T::one() {
                    return Err(Error::InvalidModel(format!(
                        "point-delay neutral term has κ·e^(rτ) = {k} ≥ 1"
                    )));
                }
                k
            }
            NeutralTerm::FadingAverage { kappa, rate } => {
                if !(rate > p.r) {
                    return Err(Error::InvalidModel(format!(
                        "fading-average kernel rate {rate} must exceed r = {}",
                        p.r
                    )));
                }
                if kappa.abs() >= T::one() {
                    return Err(Error::InvalidModel(format!("fading-average κ = {kappa} must satisfy |κ| < 1")));
                }
                kappa.abs()
            }
        };
        let mut model = Self {
            d,
            m,
            k,
            l: T::zero(),
            params,
        };
        model.l = match model.params.coercivity {
            Some(l) if l >= T::zero() => l,
            Some(l) => return Err(Error::InvalidModel(format!("declared L = {l} is negative"))),
            None => model.analytic_coercivity(),
        };
        Ok(model)
    }

    pub fn params(&self) -> &LinearParams<T> {
        &self.params
    }

    /// A constant `L_R` with
    /// `2⟨Δ(0) - (D(φ) - D(ψ)), b(φ) - b(ψ)⟩ + |σ(φ) - σ(ψ)|² ≤ L_R ‖Δ‖²_r`,
    /// `Δ = φ - ψ`, valid for every radius.
    pub fn analytic_monotonicity(&self) -> T {
        let p = &self.params;
        let two = T::lit(2.0);
        let b_norm = p.b_delay.frobenius() * (p.r * p.tau).exp();
        let beta = p.a.frobenius() + b_norm;
        let mu = p.a.symmetric_part_upper_bound().max(T::zero());
        let s1 = p.sigma1.iter().fold(T::zero(), |acc, s| acc + s.frobenius() * s.frobenius());
        two * mu + two * b_norm + two * self.k * beta + s1
    }

    /// A constant `L` with `2⟨φ(0) - D(φ), b(φ)⟩ ∨ |σ(φ)|² ≤ L(1 + ‖φ‖²_r)`
    /// derived from matrix norms.
    pub fn analytic_coercivity(&self) -> T {
        let p = &self.params;
        let two = T::lit(2.0);
        let delay_gain = (p.r * p.tau).exp();
        let b_norm = p.b_delay.frobenius() * delay_gain;
        let beta = p.a.frobenius() + b_norm;
        let mu = p.a.symmetric_part_upper_bound().max(T::zero());
        let c = norm(&p.offset);
        let k = self.k;
        let quad = two * mu + two * b_norm + two * k * beta + (T::one() + k) * c;
        let constant = (T::one() + k) * c;
        let drift = quad.max(constant);

        let s0 = p.sigma0.frobenius();
        let s1 = p
            .sigma1
            .iter()
            .fold(T::zero(), |acc, s| acc + s.frobenius() * s.frobenius())
            .sqrt();
        let diffusion = if s1.is_zero() {
            s0 * s0
        } else if s0.is_zero() {
            s1 * s1
        } else {
            two * (s0 * s0).max(s1 * s1)
        };
        drift.max(diffusion)
    }
}

impl<T: Scalar> Model<T> for LinearNeutralModel<T> {
    fn dim(&self) -> usize {
        self.d
    }

    fn noise_dim(&self) -> usize {
        self.m
    }

    fn decay(&self) -> T {
        self.params.r
    }

    fn contraction(&self) -> T {
        self.k
    }

    fn coercivity(&self) -> T {
        self.l
    }

    fn neutral(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        match self.params.neutral {
            NeutralTerm::Zero => out.iter_mut().for_each(|o| *o = T::zero()),
            NeutralTerm::PointDelay { kappa } => {
                seg.eval(-self.params.tau, out);
                out.iter_mut().for_each(|o| *o = *o * kappa);
            }
            NeutralTerm::FadingAverage { kappa, rate } => {
                seg.exp_kernel_integral(rate, self.params.quad_tol, out)?;
                let scale = kappa * (rate - self.params.r);
                out.iter_mut().for_each(|o| *o = *o * scale);
            }
        }
        Ok(())
    }

    fn drift(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        let p = &self.params;
        out.copy_from_slice(&p.offset);
        let mut x = vec![T::zero(); self.d];
        seg.present(&mut x);
        p.a.mul_add_into(&x, out);
        if !p.b_delay.is_zero() {
            seg.eval(-p.tau, &mut x);
            p.b_delay.mul_add_into(&x, out);
        }
        Ok(())
    }

    fn diffusion(&self, seg: &SegmentView<'_, T>, out: &mut [T]) -> Result<()> {
        let p = &self.params;
        out.copy_from_slice(p.sigma0.as_slice());
        if p.sigma1.is_empty() {
            return Ok(());
        }
        let mut x = vec![T::zero(); self.d];
        seg.present(&mut x);
        let mut col = vec![T::zero(); self.d];
        for (j, s) in p.sigma1.iter().enumerate() {
            col.iter_mut().for_each(|c| *c = T::zero());
            s.mul_add_into(&x, &mut col);
            for (i, &c) in col.iter().enumerate() {
                out[i * self.m + j] = out[i * self.m + j] + c;
            }
        }
        Ok(())
    }

    fn neutral_is_zero(&self) -> bool {
        matches!(self.params.neutral, NeutralTerm::Zero)
    }

    fn kernel_rates(&self) -> Vec<T> {
        match self.params.neutral {
            NeutralTerm::FadingAverage { rate, .. } => vec![rate],
            _ => Vec::new(),
        }
    }

    fn drift_bound(&self, radius: T) -> Option<T> {
        let p = &self.params;
        let gain = p.a.frobenius() + p.b_delay.frobenius() * (p.r * p.tau).exp();
        Some(norm(&p.offset) + gain * radius)
    }

    fn name(&self) -> &str {
        match self.params.neutral {
            NeutralTerm::Zero => "zero_neutral",
            NeutralTerm::PointDelay { .. } => "point_delay",
            NeutralTerm::FadingAverage { .. } => "fading_average",
        }
    }
}
