//! Capability-aligned data curation.
//!
//! The pieces, bottom up:
//!
//! - [`nn`]: a minimal dense feed-forward engine with per-sample gradients
//!   and SGD updates, shared by the base model and the raters.
//! - [`rater`]: scoring functions mapping sample features to a weight in
//!   (0, 1) through a temperature sigmoid, with an entropy bonus that keeps
//!   score distributions from collapsing.
//! - [`bilevel`]: the inner loop of weighted SGD with streamed microbatch
//!   accumulation and the first-order outer meta-update that trains one
//!   rater per capability against its own validation pool.
//! - [`curriculum`]: quadratic-decay retention schedule with per-rater
//!   quantile thresholds composed by a union rule.
//! - [`analysis`]: correlation matrices, PCA variance ratios, and effective
//!   dimensionality over score tables.
//! - [`corpus`]: synthetic multi-capability corpus with planted,
//!   independent per-capability utilities.
//! - [`experiment`]: filtered-training experiments (curriculum vs static
//!   top-k vs unfiltered, small-to-large model transfer).
//! - [`pipeline`]: the file-level orchestration the CLI drives.

pub mod analysis;
pub mod bilevel;
pub mod config;
pub mod corpus;
pub mod curriculum;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod pipeline;
pub mod rater;
pub mod score;
pub mod seeds;

pub use error::{Error, Result};
