//! Expressionlet video classification.
//!
//! Clips are described by dense spatio-temporal block features, aligned
//! through a Gaussian-mixture Universal Manifold Model, pooled into
//! per-mode covariance matrices ("expressionlets"), mapped to a vector space
//! with the matrix logarithm, optionally projected by a graph-embedding
//! discriminant, and classified with a linear SVM. A Fisher Vector encoder
//! over the same mixture serves as baseline, and [`harness`] runs the whole
//! pipeline under subject-disjoint cross-validation on synthetic data.

pub mod classify;
pub mod embed;
pub mod error;
pub mod explet;
pub mod fv;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod provenance;
pub mod stfeat;
pub mod umm;

pub use error::{Error, ErrorClass, Result};
