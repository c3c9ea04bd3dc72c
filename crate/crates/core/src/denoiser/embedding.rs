use crate::error::{Error, Result};

const FREQUENCY_BASE: f64 = 10_000.0;

/// Sinusoidal encoding of `log(sigma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseEmbedding(Vec<f64>);

impl NoiseEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `e[2i] = sin(log(sigma) * w_i)`, `e[2i+1] = cos(log(sigma) * w_i)` with
/// `w_i = 10000^(-2i/d)`.
pub fn embed_noise_level(sigma: f64, dim: usize) -> Result<NoiseEmbedding> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::param(format!(
            "embedding dimension must be even and positive, got {dim}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let phase = sigma.ln();
    let mut e = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = FREQUENCY_BASE.powf(-((2 * i) as f64) / dim as f64);
        let (s, c) = (phase * omega).sin_cos();
        e.push(s);
        e.push(c);
    }
    Ok(NoiseEmbedding(e))
}
