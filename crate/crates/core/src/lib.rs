//! Euler–Maruyama simulation of neutral stochastic functional differential
//! equations with infinite delay,
//!
//! ```text
//! d[x(t) - D(x_t)] = b(x_t) dt + σ(x_t) dw(t),   x_0 = ξ,
//! ```
//!
//! posed on the fading-memory space of continuous paths on `(-∞, 0]` with
//! finite weighted norm `‖φ‖_r = sup_{θ≤0} e^{rθ}|φ(θ)|`.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases at the crate root pin the common `f64` instantiation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod em_scheme;
pub mod error;
pub mod estimates;
pub mod history_path;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use coupling::{BrownianDriver, CauchyReport, CouplingConfig, NonExplosionTable};
pub use em_scheme::{EmState, NoNoise, NoiseSource, RunConfig, RunOutcome, StepRecord, StoppingMonitor};
pub use estimates::{BoundConstants, GrowthReport, MomentCurve};
pub use history_path::{GrowthBound, HistoryPath, InitialData, SegmentView, TailRule};
pub use model::{
    builtin::{LinearNeutralModel, NeutralTerm},
    checks::CheckReport,
    sampler::SegmentSampler,
    Model,
};

pub type InitialData64 = InitialData<f64>;
pub type HistoryPath64 = HistoryPath<f64>;
pub type InitialData32 = InitialData<f32>;
pub type HistoryPath32 = HistoryPath<f32>;
pub type LinearNeutralModel64 = LinearNeutralModel<f64>;
pub type LinearNeutralModel32 = LinearNeutralModel<f32>;
pub type RunConfig64 = RunConfig<f64>;
pub type BoundConstants64 = BoundConstants<f64>;
