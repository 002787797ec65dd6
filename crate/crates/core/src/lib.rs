//! Analysis and decision stack for performance-driven adaptive hazard alerting.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`lba`]: two-accumulator Linear Ballistic Accumulator densities, likelihood,
//!   gradients and a race simulator.
//! - [`sampler`]: No-U-Turn Hamiltonian Monte Carlo with dual-averaging warmup,
//!   split R-hat and posterior summaries.
//! - [`stats`]: one-way ANOVA, Tukey HSD and the Kolmogorov–Smirnov test.
//! - [`lpa`]: latent profile analysis (equal-variance, zero-covariance mixture).
//! - [`eeg`]: band-pass, FastICA, epoching, artifact rejection, Hanning TFR.
//! - [`nn`]: frozen convolutional stem, trainable 512-unit head, Adam, early stopping.
//! - [`continual`]: naive fine-tuning, rehearsal and EWC over hazard-type tasks.
//! - [`synth`]: ground-truth generators used by tests and the demo pipeline.
//! - [`policy`]: alert-threshold table and debounced online resolver.
//! - [`pipeline`]: staged orchestration used by the `hazalert` binary.

pub mod binio;
pub mod continual;
pub mod eeg;
pub mod error;
pub mod lba;
pub mod lpa;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod sampler;
pub mod stats;
pub mod synth;

mod types;

pub use error::{Error, Result};
pub use types::{HazardType, PerformanceLevel};
