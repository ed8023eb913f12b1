//! Causal multichannel speech enhancement with attention-driven spatial
//! filtering.
//!
//! The crate covers the full signal chain: STFT analysis, time-frequency
//! masking, spatial covariance estimation (conventional averaging or
//! learned attention), MVDR-family and fully learnable spatial filters, a
//! shoebox room simulator for static and moving talkers, and a training and
//! evaluation harness built on [`adsf_autodiff`].

pub mod attention;
pub mod beamformer;
pub mod config;
pub mod covariance;
pub mod error;
pub mod eval;
pub mod grid;
pub mod linalg;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod simulator;
pub mod stft;
pub mod train;
pub mod wav;

pub use error::{Error, Result};
