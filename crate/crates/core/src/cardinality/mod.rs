//! Distinct-count state representations.
//!
//! [`ExactDistinctState`] keeps every member and is the oracle.
//! [`CardinalitySketch`] is a HyperLogLog++ sketch with a sparse encoding at
//! precision 25, a dense 6-bit register array at precision `p`, linear
//! counting for small cardinalities and empirical bias correction near the
//! small/raw boundary.

mod bias;
mod bias_tables;
mod exact;
mod hash;
mod sketch;

pub use exact::ExactDistinctState;
pub use hash::hash64;
pub use sketch::{CardinalitySketch, EstimatorBranch, Mode};

use thiserror::Error;

pub const MIN_PRECISION: u8 = 4;
pub const MAX_PRECISION: u8 = 18;
pub const DEFAULT_PRECISION: u8 = 14;
/// Index precision of the sparse encoding.
pub const SPARSE_PRECISION: u8 = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error("precision {0} is outside [{MIN_PRECISION}, {MAX_PRECISION}]")]
    PrecisionOutOfRange(u8),
    #[error("cannot merge sketches with precision {0} and {1}")]
    PrecisionMismatch(u8, u8),
    #[error("corrupt sketch: {0}")]
    CorruptSketch(&'static str),
}
