//! Scene-dependent action–object affordance reasoning with a spatial gated
//! graph neural network.
//!
//! The crate covers the whole pipeline: instance maps become scene graphs,
//! a GGNN propagates context over them, a shared head predicts one of seven
//! action–object relationships per instance, and two LSTM decoders produce
//! explanation and consequence sentences for exceptions. Training (BPTT +
//! Adam), baselines, metrics and a synthetic data generator are included.

pub mod dataset;
pub mod decoder;
pub mod error;
pub mod ggnn;
pub mod graph;
pub mod harness;
pub mod kb;
pub mod labels;
pub mod metrics;
pub mod numeric;

pub use error::{Error, Result};
