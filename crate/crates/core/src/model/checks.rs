//! Sampling-based estimates of the structural constants of a model.
//!
//! Every estimate is a supremum over finitely many samples, hence a lower
//! bound on the true constant; pass/fail compares it with the declared value.

use serde::Serialize;

use crate::error::Result;
use crate::history_path::SegmentView;
use crate::scalar::{dot, norm_sq, Scalar};

use super::sampler::SegmentSampler;
use super::Model;

/// Default relative slack when comparing an estimate with its declared bound.
pub const DEFAULT_SLACK: f64 = 1e-6;
/// Zero-distance pairs tolerated in a row before giving up.
pub const PAIR_RETRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport<T> {
    pub constant: String,
    pub declared: T,
    pub estimate: T,
    pub trials: usize,
    pub worst_case_sample_id: usize,
    pub violations: usize,
    pub pass: bool,
}

impl<T: Scalar> CheckReport<T> {
    fn new(constant: &str, declared: T) -> Self {
        Self {
            constant: constant.to_string(),
            declared,
            estimate: T::zero(),
            trials: 0,
            worst_case_sample_id: 0,
            violations: 0,
            pass: true,
        }
    }

    fn record(&mut self, id: usize, value: T) {
        if id == 0 || value > self.estimate {
            self.estimate = value;
            self.worst_case_sample_id = id;
        }
        self.trials += 1;
    }

    fn finish(mut self, slack: T) -> Self {
        let limit = self.declared * (T::one() + slack) + slack * T::lit(1e-3);
        self.pass = self.estimate <= limit;
        self
    }
}

struct Eval<T> {
    present: Vec<T>,
    neutral: Vec<T>,
    drift: Vec<T>,
    diffusion: Vec<T>,
    norm: T,
}

fn evaluate<T: Scalar, M: Model<T> + ?Sized>(model: &M, seg: &SegmentView<'_, T>, tol: T) -> Result<Eval<T>> {
    let d = model.dim();
    let mut e = Eval {
        present: vec![T::zero(); d],
        neutral: vec![T::zero(); d],
        drift: vec![T::zero(); d],
        diffusion: vec![T::zero(); d * model.noise_dim()],
        norm: seg.fading_norm(tol)?,
    };
    seg.present(&mut e.present);
    model.neutral(seg, &mut e.neutral)?;
    model.drift(seg, &mut e.drift)?;
    model.diffusion(seg, &mut e.diffusion)?;
    Ok(e)
}

fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Estimates `k̂ = max |D(φ) - D(ψ)| / ‖φ - ψ‖_r`.
pub fn check_a3<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    sampler: &mut SegmentSampler<T>,
    trials: usize,
    slack: T,
) -> Result<CheckReport<T>> {
    let mut report = CheckReport::new("A3", model.contraction());
    let tol = sampler.tolerance();
    for id in 0..trials.max(1) {
        let (a, b, dist) = sampler.sample_distinct_pair(PAIR_RETRIES)?;
        let ea = evaluate(model, &a.segment(T::zero())?, tol)?;
        let eb = evaluate(model, &b.segment(T::zero())?, tol)?;
        let ratio = norm_sq(&sub(&ea.neutral, &eb.neutral)).sqrt() / dist;
        if ratio > model.contraction() * (T::one() + slack) {
            report.violations += 1;
        }
        report.record(id, ratio);
    }
    Ok(report.finish(slack))
}

/// Estimates the local monotonicity constant `L̂_R` on the ball of radius
/// `sampler.radius()`. The diffusion difference is measured in the Frobenius
/// norm.
pub fn check_a1<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    sampler: &mut SegmentSampler<T>,
    declared: T,
    trials: usize,
    slack: T,
) -> Result<CheckReport<T>> {
    let mut report = CheckReport::new("A1", declared);
    let tol = sampler.tolerance();
    let two = T::lit(2.0);
    for id in 0..trials.max(1) {
        let (a, b, dist) = sampler.sample_distinct_pair(PAIR_RETRIES)?;
        let ea = evaluate(model, &a.segment(T::zero())?, tol)?;
        let eb = evaluate(model, &b.segment(T::zero())?, tol)?;
        let gap = sub(&sub(&ea.present, &eb.present), &sub(&ea.neutral, &eb.neutral));
        let numerator = two * dot(&gap, &sub(&ea.drift, &eb.drift)) + norm_sq(&sub(&ea.diffusion, &eb.diffusion));
        let ratio = numerator / (dist * dist);
        if ratio > declared * (T::one() + slack) {
            report.violations += 1;
        }
        report.record(id, ratio);
    }
    Ok(report.finish(slack))
}

/// Estimates the coercivity constant
/// `L̂ = max (2⟨φ(0) - D(φ), b(φ)⟩ ∨ |σ(φ)|²) / (1 + ‖φ‖²_r)`.
pub fn check_a2<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    sampler: &mut SegmentSampler<T>,
    trials: usize,
    slack: T,
) -> Result<CheckReport<T>> {
    let mut report = CheckReport::new("A2", model.coercivity());
    let tol = sampler.tolerance();
    let two = T::lit(2.0);
    for id in 0..trials.max(1) {
        let a = sampler.sample()?;
        let e = evaluate(model, &a.segment(T::zero())?, tol)?;
        let energy = two * dot(&sub(&e.present, &e.neutral), &e.drift);
        let noise = norm_sq(&e.diffusion);
        let ratio = energy.max(noise) / (T::one() + e.norm * e.norm);
        if ratio > model.coercivity() * (T::one() + slack) {
            report.violations += 1;
        }
        report.record(id, ratio);
    }
    Ok(report.finish(slack))
}

/// Checks `|φ(0) - D(φ)|² ≤ (1 + k)² ‖φ‖²_r` on sampled segments. The
/// estimate is the worst ratio of the two sides (0 for the zero segment).
pub fn check_lemma<T: Scalar, M: Model<T> + ?Sized>(
    model: &M,
    sampler: &mut SegmentSampler<T>,
    trials: usize,
    slack: T,
) -> Result<CheckReport<T>> {
    let mut report = CheckReport::new("lemma", T::one());
    let tol = sampler.tolerance();
    let k = model.contraction();
    for id in 0..trials.max(1) {
        let a = sampler.sample()?;
        let e = evaluate(model, &a.segment(T::zero())?, tol)?;
        let lhs = norm_sq(&sub(&e.present, &e.neutral));
        let rhs = (T::one() + k) * (T::one() + k) * e.norm * e.norm;
        let ratio = if rhs > T::zero() { lhs / rhs } else if lhs > T::zero() { T::infinity() } else { T::zero() };
        if ratio > T::one() + slack {
            report.violations += 1;
        }
        report.record(id, ratio);
    }
    Ok(report.finish(slack))
}

/// Lemma check for one explicit segment: `(lhs, rhs)` of the inequality.
pub fn lemma_sides<T: Scalar, M: Model<T> + ?Sized>(model: &M, seg: &SegmentView<'_, T>, tol: T) -> Result<(T, T)> {
    let e = evaluate(model, seg, tol)?;
    let k = model.contraction();
    Ok((norm_sq(&sub(&e.present, &e.neutral)), (T::one() + k) * (T::one() + k) * e.norm * e.norm))
}
