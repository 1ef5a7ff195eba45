//! Time-cycle click-through-rate modeling on a small reverse-mode autodiff engine.

// `!(x > 0.0)` is how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod time_encoding;
pub mod train;

pub use error::{Error, Result};
