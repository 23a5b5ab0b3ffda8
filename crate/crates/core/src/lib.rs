//! Streaming test-time adaptation for multi-channel trial classification.
//!
//! The pipeline aligns incoming trials with an incrementally updated
//! whitening transform, scores them with an ensemble of small
//! differentiable classifiers combined by a spectral meta-learner, and then
//! adapts every ensemble member on a sliding window of recent trials by
//! minimizing temperature-scaled conditional entropy plus a class-frequency
//! recalibrated marginal diversity term.
//!
//! Module map:
//!
//! - [`matcore`]: symmetric eigendecomposition, inverse square root, power iteration.
//! - [`alignment`]: offline and incremental Euclidean alignment.
//! - [`classifier`]: featurizers, linear/MLP classifiers, backprop, Adam, source training.
//! - [`ttaloss`]: entropy and recalibrated diversity losses and the per-window update step.
//! - [`ensemble`]: prediction history, spectral meta-learner weights, ensemble rules.
//! - [`engine`]: the per-arrival predict-then-update loop and session modes.
//! - [`harness`]: synthetic data, metrics, file formats, experiment drivers.

pub mod alignment;
pub mod classifier;
pub mod engine;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod matcore;
pub mod ttaloss;

pub use error::{Error, Result};
