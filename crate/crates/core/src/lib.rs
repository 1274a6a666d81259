//! Interrupted cooperative spectrum sensing.
//!
//! Sensing nodes run energy detectors and report their local statistics to a
//! fusion center over a noisy channel. Each report is gated by an independent
//! Bernoulli draw so that nodes sleep part of the time. The fusion center
//! recovers the local statistics with an MMSE linear compensator, fuses them
//! linearly and applies a per-realization CFAR threshold.
//!
//! The crate covers the full chain:
//!
//! * [`model`]: configuration types, flat index mapping, Bernoulli schedules
//! * [`moments`]: second-order statistics of the local energy statistics and reports
//! * [`compensator`]: MMSE weights and the statistics of the estimate
//! * [`detection`]: fusion, LRT, CFAR thresholds, detection probabilities, deflection
//! * [`optimize`]: KKT and deflection/SDP schedule optimizers, scenario trees, oracles
//! * [`sim`]: seeded Monte Carlo simulation of the physical chain
//! * [`cli`]: experiment configs, figure presets, CSV/JSON emission

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod compensator;
pub mod detection;
pub mod error;
pub mod linalg;
pub mod model;
pub mod moments;
pub mod optimize;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
