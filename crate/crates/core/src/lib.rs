//! Exact peak computation for discrete-time systems.
//!
//! The peak `sup_k ν_k` of a bounded real sequence is computed exactly once a
//! certificate pair `(h, β)` with `ν_k <= h(β^k)` is known: after the running
//! maximum first exceeds `h(0)`, only finitely many ranks can still improve it,
//! and [`sequence::solve_peak`] stops at the last of them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod cli;
pub mod config;
pub mod problem;
pub mod report;
pub mod reproduce;
pub mod running_example;
pub mod sequence;
pub mod system;

pub use config::SolveConfig;
pub use problem::{Problem, SolveError};
pub use report::SolveReport;
