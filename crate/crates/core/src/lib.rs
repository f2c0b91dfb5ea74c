//! Cluster-restricted instrumented PCA.
//!
//! The crate builds interpretable conditional factor models from firm
//! characteristics:
//!
//! * [`panel`] loads the characteristic/return panel, standardizes it and
//!   builds value- or equal-weight schemes.
//! * [`similarity`] turns weighted rank correlations into a characteristic
//!   similarity and distance matrix.
//! * [`clustering`] splits prior clusters on a kNN similarity graph and merges
//!   the pieces by relative inter-cluster similarity, choosing the number of
//!   clusters from the merge trace.
//! * [`factor_model`] estimates IPCA with per-factor loading restrictions by
//!   alternating least squares, in-sample and on an expanding window.
//! * [`evaluation`], [`bayes`] and [`embedding`] cover factor statistics,
//!   tangency backtests, subset selection and 2-D maps of the clusters.

#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod bayes;
pub mod clustering;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod factor_model;
mod linalg;
pub mod panel;
pub mod series;
pub mod similarity;
pub mod synthetic;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
