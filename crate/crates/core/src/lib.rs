//! Multi-source transfer learning with peer-weighted ensembles and
//! adaptive multi-source active learning.
//!
//! The pipeline per target domain:
//! 1. [`kernel::solve_kmm`] reweights each source's examples to match the
//!    target's unlabeled pool.
//! 2. [`svm::train_weighted_svm`] fits one linear model per source.
//! 3. [`ensemble`] combines them using source-to-target proximity and a
//!    source-to-source relation matrix.
//! 4. [`active`] spends a label budget across sources.
//!
//! [`harness`] runs repeated randomized trials of the above.

pub mod active;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod stats;
pub mod svm;

pub use error::{Error, Result};
