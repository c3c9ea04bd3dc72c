//! Residual radar diffusion: learn the LiDAR-minus-radar residual of a
//! bird's-eye-view image with a sigma-adaptive, radar-attention-weighted
//! objective, and sample it back with a Heun probability-flow integrator.
//!
//! The crate also carries the mmWave signal chain that produces radar BEV
//! images, a synthetic paired-scene generator, and point-cloud metrics.

pub mod attention;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod sampler;
pub mod schedule;
pub mod signal;

pub use error::{Error, Result};
pub use grid::Grid2D;
