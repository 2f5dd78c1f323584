//! Sparse coding of dense multi-sensor readings with a shrinking sparse
//! autoencoder, compressed by compressive sensing and recovered with LASSO.
//!
//! The pieces, in pipeline order:
//!
//! - [`data`]: CSV ingestion, a correlated synthetic field, and sphering.
//! - [`ssae`]: forward pass, top-`K` shrinking, rounding, cost and gradient.
//! - [`trainer`]: L-BFGS training ([`lbfgs`]) with k-fold cross-validation.
//! - [`cs`]: Gaussian sensing matrices and LASSO recovery.
//! - [`pipeline`]: gateway encode, base-station decode, model files.
//! - [`baselines`] and [`bench`]: DCT / DFT / PCA comparison harness.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bench;
pub mod cs;
pub mod data;
mod error;
pub mod lbfgs;
pub mod pipeline;
pub mod ssae;
pub mod trainer;

pub use error::{Error, Result};
