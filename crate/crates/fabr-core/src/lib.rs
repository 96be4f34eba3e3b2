//! Memory-bounded random-feature ridge regression and classification.
//!
//! The engine solves `beta(z) = (S^T S / N + zI)^{-1} S^T Y / N` for a whole
//! grid of shrinkages `z` in one pass, where `S` is a wide matrix of random
//! features that is never materialized: feature blocks are regenerated from
//! seeds whenever they are needed. Two solver paths share the spectral core:
//!
//! * [`full_solver`] accumulates the exact `N x N` Gram matrix block by
//!   block and eigendecomposes it once per checkpoint.
//! * [`lowrank_solver`] maintains a rank-capped spectral sketch of the Gram
//!   matrix instead, with tracked approximation bounds, for samples too large
//!   to afford `N x N`.
//!
//! [`ensemble`] fits independent solvers on disjoint data batches and
//! averages their prediction scores. [`harness`] drives expanding-complexity
//! evaluation curves and the multi-shrinkage timing benchmark.

pub mod data_io;
pub mod ensemble;
pub mod error;
pub mod feature_gen;
pub mod full_solver;
pub mod harness;
pub mod linalg;
pub mod lowrank_solver;
pub mod ridge_spectral;
pub mod seeding;

pub use data_io::{DenseMatrix, Dtype, EncodedLabels, LabeledDataset};
pub use error::{Error, Result};
pub use feature_gen::{Activation, FeatureBlock, FeaturePlan};
pub use ridge_spectral::{EigPairs, ResolventMode, RidgeGrid, RidgeSolution};

/// Default ceiling for the exact solver's `N x N` Gram allocation; the
/// `FABR_MEM_BUDGET_BYTES` environment variable overrides it in the CLI.
pub const DEFAULT_MEM_BUDGET_BYTES: u64 = 8 << 30;
