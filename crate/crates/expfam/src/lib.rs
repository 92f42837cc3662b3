//! Sparse estimation in general exponential families.
//!
//! The crate provides natural-parameter exponential family models, an
//! L1-regularized maximum likelihood solver with a two-stage
//! threshold-and-refit variant, moment/cumulant machinery for verifying
//! almost-strong-convexity of the population loss, restricted Fisher
//! eigenvalue computation, and synthetic experiments measuring risk scaling.
//!
//! Core math modules are generic over [`num::Scalar`] (`f64` or `f32`);
//! the crate root re-exports concrete `f64` aliases for the common case.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod family;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod num;
pub mod solver;
pub mod sparsity;

pub use error::{Error, Result};

/// Concrete `f64` aliases for the generic core types.
pub type FamilyModel = family::FamilyModel<f64>;
pub type ParameterVector = family::ParameterVector<f64>;
pub type Dataset = family::Dataset<f64>;
pub type FisherMatrix = family::FisherMatrix<f64>;
pub type CovariateDesign = family::CovariateDesign<f64>;
