//! Structure learning for latent factor models by correlation thresholding.
//!
//! The pipeline thresholds a correlation matrix at a sweep of cutoffs,
//! reads each thresholded graph's independent maximal cliques off as a
//! candidate loading pattern, fits each distinct pattern by constrained
//! maximum likelihood and keeps the best one.

// `!(a <= b)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ct;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod simgen;

pub use error::{Error, Result};
