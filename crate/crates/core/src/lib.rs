//! Core numerics for learning affine maps between independently trained
//! representation spaces and evaluating what transfers across them.
//!
//! Modules:
//! - [`tensor_store`]: on-disk tensor container, dataset manifests, and a
//!   synthetic paired-embedding generator with known ground truth.
//! - [`alignment`]: ridge-regression affine maps from streamed sufficient
//!   statistics.
//! - [`similarity`]: linear CKA, SVCCA and mean pooling.
//! - [`classifier_ood`]: frozen linear heads, transfer accuracy and
//!   energy-score OOD detection.
//! - [`tokenizer_compat`]: character-offset token alignment and tokenizer
//!   compatibility metrics.
//! - [`privacy_eval`]: shadow-mapper membership inference against a learned map.

pub mod alignment;
pub mod classifier_ood;
mod error;
pub mod linalg;
pub mod privacy_eval;
pub mod similarity;
pub mod tensor_store;
pub mod tokenizer_compat;

pub use error::{Error, Result};

/// Dense row-major-semantics matrix used throughout (rows are samples).
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
