//! Multiple-knockoff variable selection for the Gaussian linear model.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: symmetric eigendecomposition, symmetric roots and thin QR.
//! - [`knockoffs`]: Gram-matrix construction, the critical `s0` search, batching
//!   and the construction of `d` knockoff copies per feature.
//! - [`lasso`]: the lambda grid, pathwise coordinate descent and entry scores.
//! - [`competition`]: labels, the mirandom map and the rejection rule.
//! - [`resampling`]: model-aware bootstrap and the data-driven
//!   multi-knockoff / multi-knockoff-select procedures.
//! - [`simulate`]: data generation, replicate orchestration and FDR/power curves.

pub mod competition;
pub mod error;
pub mod knockoffs;
pub mod lasso;
pub mod numerics;
pub mod resampling;
pub mod seed;
pub mod simulate;

pub use error::{Error, Result};
