//! Infinite warped mixture model.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod eval_bench;
pub mod exec;
pub mod gp;
pub mod latent_mixture;
pub mod numerics;
pub mod predictive;
pub mod sampler;

pub use error::{Error, Result};
