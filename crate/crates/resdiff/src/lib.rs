//! Probabilistic spatiotemporal forecasting through mean-residual
//! decomposition: a deterministic MLP backbone predicts the conditional
//! mean, a scale-aware denoising diffusion model learns the residual
//! distribution, and ensemble forecasts are scored with a full
//! probabilistic metric suite.
//!
//! See the `examples/` directory for runnable walkthroughs of each major
//! capability, and the `resdiff` binary for the command-line pipeline.

pub mod config;
pub mod data;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod fluctscale;
pub mod mean;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
