//! Empirical-Bayes linear discriminant analysis for matrix-valued data.
//!
//! Observations are p×q matrices following a matrix normal law with a
//! shared Kronecker-structured covariance. Training whitens the data by
//! the estimated Σ^{-1/2}, shrinks the whitened class means through a
//! nonparametric-maximum-likelihood prior, and classifies by the resulting
//! discriminant. A seeded simulation generator and replication harness
//! reproduce the cross-pattern benchmark scenarios, and an EEG
//! preprocessing pipeline handles partition-median trial reduction.

pub mod classifier;
pub mod cov;
pub mod dataset;
pub mod eeg;
pub mod error;
pub mod glasso;
pub mod harness;
pub mod matrix;
pub mod npmle;
pub mod rng;
pub mod simgen;

pub use error::{Error, Result};
