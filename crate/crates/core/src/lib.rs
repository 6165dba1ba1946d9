//! Frequency-agnostic word embeddings.
//!
//! Skip-gram with negative sampling is trained jointly with a discriminator
//! that tries to tell popular words from rare words by their embedding
//! alone. The embeddings are updated to minimize the skip-gram loss while
//! fooling the discriminator, which removes the frequency signal that plain
//! skip-gram training leaves in the vector space.
//!
//! The crate also ships the diagnostics used to measure that signal:
//! nearest-neighbor frequency statistics, a 2-D principal-component
//! projection, a linear frequency probe, displacement from initialization,
//! and Spearman evaluation on word-similarity datasets.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analytics;
pub mod corpus;
mod error;
pub mod io;
pub mod linalg;
pub mod sgns;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
