//! Relevance-guided structured filter pruning for small sequential CNNs.
//!
//! The crate scores every conv filter by epsilon-rule relevance propagation
//! over a small labeled reference set and masks the least relevant filters.
//! Three drivers are provided:
//!
//! - [`strategy::run_px`]: rank once, prune in ascending relevance.
//! - [`strategy::run_dpx`]: re-rank after every pruning step.
//! - [`strategy::run_sd_dpx`]: re-rank after every accepted step, gate each
//!   step on the harmonic mean of per-class reference accuracy, halve the
//!   step on a drop, and skip low-relevance filters that the gate rejects.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the experiment harness and file formats use.
//! Pruning rates are exact rationals ([`Rate`]).

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod io;
pub mod lrp;
pub mod metrics;
pub mod nn;
pub mod pruning;
pub mod rate;
pub mod report;
pub mod scalar;
pub mod strategy;
pub mod tensor;
pub mod toylab;

pub use error::{Error, Result};
pub use rate::Rate;
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type ModelGraph = nn::ModelGraph<f64>;
pub type ModelGraph32 = nn::ModelGraph<f32>;
pub type LabeledSet = dataset::LabeledSet<f64>;
pub type RelevanceMap = lrp::RelevanceMap<f64>;
pub type LrpConfig = lrp::LrpConfig<f64>;
pub type Trajectory = strategy::Trajectory<f64>;
