//! Finite-space semimartingale decompositions and free-lunch detection.

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod doob;
pub mod error;
pub mod generators;
pub mod integrand;
pub mod io;
pub mod komlos;
pub mod pipeline;
pub mod space;
pub mod variation;

pub use error::{Error, Result};
