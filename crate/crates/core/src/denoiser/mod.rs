//! Conditional denoiser `r_hat = f([z, x], sigma)` with hand-written
//! gradients, its checkpoint format, and a closed-form oracle for sampler
//! validation.

mod checkpoint;
mod embedding;
pub mod layers;
mod net;
mod oracle;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, PredictionTarget, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use embedding::{embed_noise_level, NoiseEmbedding};
pub use layers::NORM_EPS;
pub use net::{backward, denoise, forward, Tape};
pub use oracle::OracleDenoiser;
pub use params::{Architecture, DenoiserParams, InitOptions, TensorInfo};

use crate::error::Result;
use crate::grid::Grid2D;

/// Anything that maps a noisy residual and its radar condition to a
/// residual estimate at a given noise level.
pub trait Denoise {
    fn denoise(&self, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<Grid2D>;
}

impl Denoise for DenoiserParams {
    fn denoise(&self, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<Grid2D> {
        net::denoise(self, z, x, sigma)
    }
}

impl<F> Denoise for F
where
    F: Fn(&Grid2D, &Grid2D, f64) -> Result<Grid2D>,
{
    fn denoise(&self, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<Grid2D> {
        self(z, x, sigma)
    }
}
