//! Image set classification by linear regression.
//!
//! Every gallery class is a linear subspace spanned by its raw grayscale
//! images. A probe image is reconstructed from each class subspace by least
//! squares; the reconstruction residuals of all probe images are then fused
//! into one set-level label by majority voting, nearest neighbour, or
//! exponentially weighted voting.
//!
//! The crate is organised the way the data flows:
//!
//! * [`preprocess`] turns image files into fixed-resolution feature vectors.
//! * [`gallery`] builds, conditions and persists the per-class regressors.
//! * [`classify`] computes residual matrices and applies the decision rules.
//! * [`dataset`] loads manifests, generates synthetic data, splits folds and
//!   scores accuracy.
//! * [`bench`] times the per-image path against the pseudoinverse batch path.

pub mod bench;
pub mod classify;
pub mod dataset;
mod error;
pub mod gallery;
mod linalg;
pub mod preprocess;
pub mod seed;

pub use error::{Error, Result};

/// Label of a gallery class.
pub type ClassId = String;
