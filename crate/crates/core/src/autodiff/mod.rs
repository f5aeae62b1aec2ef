//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! Every operation appends a node to a [`Tape`]; [`Tape::backward`] walks the
//! tape in reverse creation order. Forward values are checked for finiteness
//! as they are produced.

mod array;
mod kernels;
mod tape;

pub use array::Array;
pub use tape::{BatchNormStats, Mode, Tape, Var};
