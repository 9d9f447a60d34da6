//! Bathymetric terrain maps from sparse variational Gaussian processes
//! trained on uncertain (georeferenced-beam) inputs, plus particle-filter
//! localization on the learned maps.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kernels;
pub mod linalg;
pub mod optim;
pub mod pf;
pub mod pipeline;
pub mod survey;
pub mod svgp;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
