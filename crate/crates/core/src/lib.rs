//! Flow-based conditional generative models for time-series scenario forecasting.
//!
//! The crate trains normalizing flows built from affine coupling layers
//! (a vanilla conditional variant and a reinforced variant that also
//! transforms the pass-through partition from the condition), samples
//! scenario forecasts conditioned on historical windows, and evaluates
//! them with deviation-coverage and prediction-interval-width metrics
//! against an autoregressive baseline.
//!
//! Module map:
//! - [`numerics`]: dense arrays, tape-based reverse-mode differentiation,
//!   batch normalization, and the Adam optimizer.
//! - [`flow`]: coupling blocks, the conditional flow model, exact
//!   log-density, inverse-direction sampling, and checkpoints.
//! - [`training`]: conditional maximum likelihood, Wasserstein-regularized
//!   training with a clamped critic, and the 1-D divergence oracles.
//! - [`data`]: load CSV ingestion, household aggregation, window cutting,
//!   chronological splits, and the synthetic load generator.
//! - [`evaluation`]: scenario generation, quantile bands, reliability and
//!   sharpness metrics, and the AR(24)-plus-noise baseline.

pub mod data;
pub mod evaluation;
pub mod flow;
pub mod numerics;
pub mod training;

mod error;

pub use error::{Error, Result};
