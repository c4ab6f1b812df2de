//! Bayesian sensing-aware transmit design for MIMO integrated sensing and
//! communication under angular uncertainty.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod benchmarks;
pub mod channel;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod optimizer;
pub mod priors;
pub mod sensing;

pub use error::{Error, Result};
