//! Block-sparse shallow-water flood solver.

// `!(x > 0.0)` rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block;
pub mod error;
pub mod forcing;
pub mod grid;
pub mod nesting;
pub mod scenario;
pub mod series;
pub mod stepper;
pub mod validation;

pub use error::{FloodError, Result};
