//! Config-driven front end for the `levylab` numerics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod expr;
pub mod output;
pub mod params;
