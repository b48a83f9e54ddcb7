//! Drift-aware streaming classification with uncertainty-driven retraining.
//!
//! The pipeline trains a small feed-forward classifier on the head of a
//! labelled stream, scores every subsequent sample with an uncertainty
//! estimator (plain softmax, Monte Carlo dropout, a deep ensemble,
//! posterior-weight sampling, or activation shaping), and feeds the
//! predictive entropy of each sample into an adaptive-windowing change
//! detector. When the detector reports that the entropy distribution has
//! shifted, the model is retrained on the initial segment plus the most
//! recent samples, and scoring continues. Quality is reported as
//! Matthews correlation and expected calibration error, aggregated over
//! seeded repetitions; every run is reproducible bit for bit from its seed.
//!
//! Modules:
//! - [`tensor`]: minimal row-major matrix used throughout.
//! - [`nn`]: the classifier — initialisation, forward passes, gradients,
//!   Adam, and the training loop.
//! - [`uncertainty`]: the five per-sample predictive-distribution
//!   estimators and their entropy.
//! - [`adwin`]: adaptive-windowing change detector over a numeric stream.
//! - [`metrics`]: confusion/correlation, calibration, and seed aggregation.
//! - [`stream`]: dataset loading, the prequential runner, fixed-position
//!   replay, and hyperparameter sweeps.
//! - [`config`]: TOML configuration with built-in per-dataset profiles.

pub mod adwin;
pub mod config;
pub mod error;
pub mod metrics;
pub mod nn;
pub(crate) mod seeds;
pub mod stream;
pub mod tensor;
pub mod uncertainty;

pub use error::{Error, Result};
