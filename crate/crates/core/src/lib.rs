//! Survey-weighted LATE estimation with cross-fitted nuisances, weighted
//! bounds on the ATE, and the simulation design used to study both.
//! `no_std`; needs `alloc`.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bounds;
pub mod crossfit;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod math;
pub mod matrix;
pub mod simulation;

pub use error::{Error, Result};
