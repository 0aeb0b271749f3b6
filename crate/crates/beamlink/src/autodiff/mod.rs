//! Minimal reverse-mode automatic differentiation over dense real arrays.
//!
//! Complex quantities are carried as a trailing axis of size two (re, im);
//! every complex op defines its backward in terms of that real representation,
//! which is equivalent to Wirtinger calculus for real-valued losses. There is
//! no broadcasting beyond leading-batch expansion in `complex_matmul`: any
//! other shape mismatch is an error.

mod check;
mod conv;
mod cxops;
mod demap;
mod gather;
mod tape;
mod tensor;

pub use check::{finite_difference_check, ScalarFn};
pub use demap::SoftDemapTables;
pub use gather::GatherPlan;
pub use tape::{Gradients, NormStats, Tape, VarId};
pub use tensor::{strides_of, Real, Tensor};
