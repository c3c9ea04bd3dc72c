//! Exponential (Karras) noise schedule and the matching loss weight.

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 7.0;
pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_NUM_STEPS: usize = 18;

/// Descending sequence of noise standard deviations, `sigmas[0] = sigma_max`
/// and `sigmas[T-1] = sigma_min`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    rho: f64,
    sigma_min: f64,
    sigma_max: f64,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(rho: f64, sigma_min: f64, sigma_max: f64, num_steps: usize) -> Result<Self> {
        if num_steps < 2 {
            return Err(Error::param(format!(
                "schedule needs at least 2 steps, got {num_steps}"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param(format!("rho must be positive, got {rho}")));
        }
        if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
            return Err(Error::param(format!(
                "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
            )));
        }

        let inv_rho = 1.0 / rho;
        let hi = sigma_max.powf(inv_rho);
        let lo = sigma_min.powf(inv_rho);
        let last = (num_steps - 1) as f64;
        let mut sigmas: Vec<f64> = (0..num_steps)
            .map(|t| (hi + t as f64 / last * (lo - hi)).powf(rho))
            .collect();
        // Round-tripping through powf can move the endpoints by an ulp.
        sigmas[0] = sigma_max;
        sigmas[num_steps - 1] = sigma_min;

        Ok(Self {
            rho,
            sigma_min,
            sigma_max,
            sigmas,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn num_steps(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// Uniformly draws a timestep index and returns it with its noise level.
    pub fn draw_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let t = rng.random_range(0..self.sigmas.len());
        (t, self.sigmas[t])
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(
            DEFAULT_RHO,
            DEFAULT_SIGMA_MIN,
            DEFAULT_SIGMA_MAX,
            DEFAULT_NUM_STEPS,
        )
        .expect("default schedule parameters are valid")
    }
}

/// Loss weight `1 / sigma^2`.
pub fn karras_weight(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    Ok(1.0 / (sigma * sigma))
}
