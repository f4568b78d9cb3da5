//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records each operation of a forward pass together with its
//! output value. [`Tape::backward`] walks the records once in reverse and
//! accumulates `∂loss/∂value` into every [`Parameter`] touched by the pass.
//! [`grad_check`] compares those gradients with central finite differences.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{ParamId, ParamStore, Parameter};
pub(crate) use tape::{bce, normalize_rows, xent_row};
pub use tape::{BackwardFn, Gradients, NodeId, Tape};
