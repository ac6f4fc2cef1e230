//! Bit-accurate software emulation of reduced-precision floating-point
//! formats.
//!
//! The emulation strategy is compute-wide-then-round: every arithmetic
//! primitive evaluates in `f64` and the result is rounded into the target
//! [`FloatFormat`] under round-to-nearest-even. [`Numerics`] carries the
//! active mode so the same code path serves both wide (`f64`) and emulated
//! execution.

mod format;
mod numerics;

pub use format::{FloatFormat, FormatConstants, FormatError};
pub use numerics::{qop, Numerics, QOp};
