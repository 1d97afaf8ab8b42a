// `!(x <= y)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod format;
pub mod identification;
pub mod instances;
pub mod linalg;
pub mod problem;
pub mod solvers;
