//! Nonlinear filtering with unknown inputs recovered from a side model.
//!
//! The crate provides sigma-point and extended Kalman filters that estimate
//! unknown inputs (UI) at every step from the current state belief, together
//! with classical UI/MVU baselines, an error-bound tracer and a Monte-Carlo
//! experiment harness for the rigid-link case study.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod filters;
pub mod harness;
pub mod io;
pub mod models;
pub mod numerics;
pub mod optimize;
pub mod sigma;

pub use error::{Error, Result};
