//! Simulation and verification toolkit for Lévy-driven SDEs with singular
//! drifts.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod ergodicity;
pub mod error;
pub mod inequality;
pub mod integrator;
pub mod levy;
pub mod pide;
pub mod presets;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;

pub use error::{Error, Result};
