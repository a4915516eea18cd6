//! Moment asymptotics for the parabolic Anderson model with noise that is
//! fractional in time and Riesz-type in space.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod chaos;
pub mod cli;
pub mod config;
pub mod error;
pub mod feynman_kac;
pub mod kernel;
pub mod model;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod stats;
pub mod toeplitz;
pub mod variational;

pub use error::{Error, Result};
pub use kernel::SpatialKernel;
pub use model::CovarianceModel;
