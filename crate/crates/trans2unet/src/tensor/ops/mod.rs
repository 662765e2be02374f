//! Operation set of the autodiff engine.
//!
//! Each op validates shapes, computes the forward value, and registers a
//! backward closure that accumulates into its parents. Backward closures
//! read parent data at traversal time, so leaf values must not change
//! between forward and backward on the same graph.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod pool;
mod reduce;
mod resample;
mod shape;

pub use conv::Padding;
pub use shape::concat;

/// Train/eval switch for ops whose behavior differs between phases
/// (dropout, batch norm).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mode {
    Train,
    Eval,
}
