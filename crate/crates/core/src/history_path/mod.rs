//! Elements of the fading-memory space and trajectory histories.
//!
//! A [`HistoryPath`] stores the whole past of a solution: an analytic
//! [`InitialData`] descriptor on `(-∞, 0]` and grid samples after that. A
//! [`SegmentView`] is the functional state `x_t` read off a path.

mod initial;
pub(crate) mod norm;
mod path;
mod quadrature;
mod segment;

pub use initial::{GrowthBound, InitialData, InitialFn, TailRule};
pub use path::HistoryPath;
pub use segment::{fading_norm, segment_distance, SegmentView};
