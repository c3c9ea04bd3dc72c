use super::Denoise;
use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Exact posterior-mean denoiser for a Gaussian prior `r ~ N(mu, s^2 I)`
/// observed as `z = r + sigma * eps`. Ignores the radar condition.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    mu: Grid2D,
    prior_std: f64,
}

impl OracleDenoiser {
    pub fn new(mu: Grid2D, prior_std: f64) -> Result<Self> {
        if !(prior_std >= 0.0 && prior_std.is_finite()) {
            return Err(Error::param(format!(
                "prior stddev must be nonnegative, got {prior_std}"
            )));
        }
        Ok(Self { mu, prior_std })
    }

    /// Always predicts `mu` (a point-mass prior).
    pub fn constant(mu: Grid2D) -> Self {
        Self { mu, prior_std: 0.0 }
    }

    pub fn mean(&self) -> &Grid2D {
        &self.mu
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }
}

impl Denoise for OracleDenoiser {
    fn denoise(&self, z: &Grid2D, _x: &Grid2D, sigma: f64) -> Result<Grid2D> {
        let s2 = self.prior_std * self.prior_std;
        if s2 == 0.0 {
            self.mu.ensure_same_shape(z)?;
            return Ok(self.mu.clone());
        }
        let v2 = sigma * sigma;
        z.zip_map(&self.mu, |zv, m| (s2 * zv + v2 * m) / (s2 + v2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_prior_returns_mean() {
        let mu = Grid2D::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let o = OracleDenoiser::new(mu.clone(), 0.0).unwrap();
        let z = Grid2D::filled(3, 3, 42.0);
        for sigma in [1e-3, 1.0, 80.0] {
            assert_eq!(o.denoise(&z, &z, sigma).unwrap(), mu);
        }
    }

    #[test]
    fn noiseless_limit_returns_observation() {
        let o = OracleDenoiser::new(Grid2D::zeros(2, 2), 1.0).unwrap();
        let z = Grid2D::from_vec(2, 2, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let out = o.denoise(&z, &z, 1e-9).unwrap();
        assert!(out.max_abs_diff(&z).unwrap() < 1e-15);
    }

    #[test]
    fn equal_precision_average() {
        let o = OracleDenoiser::new(Grid2D::zeros(1, 1), 1.0).unwrap();
        let z = Grid2D::filled(1, 1, 4.0);
        assert_eq!(o.denoise(&z, &z, 1.0).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn rejects_negative_prior() {
        assert!(OracleDenoiser::new(Grid2D::zeros(1, 1), -0.1).is_err());
    }
}
