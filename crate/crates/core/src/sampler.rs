//! Heun (2nd order) integration of the probability-flow ODE over the
//! residual, followed by residual fusion `y_hat = x + z0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{Denoise, PredictionTarget};
use crate::diffusion::standard_normal_grid;
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    pub seed: u64,
    pub record_trajectory: bool,
    /// Finish with an Euler step from `sigma_min` to 0 (off by default).
    pub terminal_euler_step: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            seed: 0,
            record_trajectory: false,
            terminal_euler_step: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryState {
    /// Schedule index; `num_steps` for the optional terminal state.
    pub t: usize,
    pub sigma: f64,
    pub z: Grid2D,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    /// `x + z0`.
    pub enhanced: Grid2D,
    pub z0: Grid2D,
    pub trajectory: Option<Vec<TrajectoryState>>,
}

/// Initial state `z_T = sigma_max * eps` drawn from the configured seed.
pub fn initial_state(height: usize, width: usize, cfg: &SamplerConfig) -> Grid2D {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sigma_max = cfg.schedule.sigma_max();
    standard_normal_grid(&mut rng, height, width).map(|e| sigma_max * e)
}

fn check_finite(z: &Grid2D, step: usize, sigma: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Sampler { step, sigma })
    }
}

/// Integrates from `z_init` at `sigma_max` down the schedule. Returns the
/// final state and, if requested, every visited state.
pub fn heun_integrate<D: Denoise + ?Sized>(
    f: &D,
    x: &Grid2D,
    z_init: Grid2D,
    cfg: &SamplerConfig,
) -> Result<(Grid2D, Option<Vec<TrajectoryState>>)> {
    if !x.is_finite() {
        return Err(Error::param("radar condition contains non-finite values"));
    }
    x.ensure_same_shape(&z_init)?;
    let sigmas = cfg.schedule.sigmas();
    let mut traj = cfg.record_trajectory.then(Vec::new);
    let mut z = z_init;
    if let Some(tr) = traj.as_mut() {
        tr.push(TrajectoryState {
            t: 0,
            sigma: sigmas[0],
            z: z.clone(),
        });
    }

    for (step, pair) in sigmas.windows(2).enumerate() {
        let (cur, next) = (pair[0], pair[1]);
        let h = next - cur;
        let r_hat = f.denoise(&z, x, cur)?;
        let d = z.zip_map(&r_hat, |zv, rv| (zv - rv) / cur)?;
        let z_pred = z.zip_map(&d, |zv, dv| zv + h * dv)?;
        check_finite(&z_pred, step, next)?;
        let r_hat_pred = f.denoise(&z_pred, x, next)?;
        let d_pred = z_pred.zip_map(&r_hat_pred, |zv, rv| (zv - rv) / next)?;
        let slope = d.zip_map(&d_pred, |a, b| a + b)?;
        z = z.zip_map(&slope, |zv, s| zv + 0.5 * h * s)?;
        check_finite(&z, step, next)?;
        if let Some(tr) = traj.as_mut() {
            tr.push(TrajectoryState {
                t: step + 1,
                sigma: next,
                z: z.clone(),
            });
        }
    }

    if cfg.terminal_euler_step {
        let last = *sigmas.last().expect("schedule has at least two levels");
        // z + (0 - sigma) * (z - r_hat) / sigma == r_hat
        z = f.denoise(&z, x, last)?;
        check_finite(&z, sigmas.len() - 1, 0.0)?;
        if let Some(tr) = traj.as_mut() {
            tr.push(TrajectoryState {
                t: sigmas.len(),
                sigma: 0.0,
                z: z.clone(),
            });
        }
    }
    Ok((z, traj))
}

/// Draws `z_T`, integrates to `z0` and fuses `y_hat = x + z0`.
pub fn heun_sample<D: Denoise + ?Sized>(f: &D, x: &Grid2D, cfg: &SamplerConfig) -> Result<SampleOutput> {
    let z_init = initial_state(x.height(), x.width(), cfg);
    let (z0, trajectory) = heun_integrate(f, x, z_init, cfg)?;
    let enhanced = x.zip_map(&z0, |a, b| a + b)?;
    Ok(SampleOutput {
        enhanced,
        z0,
        trajectory,
    })
}

/// Enhanced BEV for a network trained on `target`: residual networks are
/// fused with the radar input, direct networks return `z0` unchanged.
pub fn enhance<D: Denoise + ?Sized>(f: &D, target: PredictionTarget, x: &Grid2D, cfg: &SamplerConfig) -> Result<Grid2D> {
    let out = heun_sample(f, x, cfg)?;
    Ok(match target {
        PredictionTarget::Residual => out.enhanced,
        PredictionTarget::Direct => out.z0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::OracleDenoiser;

    fn cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn constant_prediction_is_recovered() {
        let x = Grid2D::from_fn(8, 8, |i, j| ((i + 2 * j) % 5) as f64 / 5.0);
        let r_star = Grid2D::from_fn(8, 8, |i, j| (i as f64 - j as f64) / 10.0);
        let f = OracleDenoiser::constant(r_star.clone());
        let mut c = cfg(3);
        // Exact solution at sigma_min: r* + (sigma_min / sigma_max) (z_T - r*).
        let out = heun_sample(&f, &x, &c).unwrap();
        let ratio = c.schedule.sigma_min() / c.schedule.sigma_max();
        let z_t = initial_state(8, 8, &c);
        let affine = r_star.zip_map(&z_t, |r, z| r + ratio * (z - r)).unwrap();
        let expect = x.zip_map(&affine, |a, b| a + b).unwrap();
        assert!(out.enhanced.max_abs_diff(&expect).unwrap() < 1e-9);

        c.terminal_euler_step = true;
        let out = heun_sample(&f, &x, &c).unwrap();
        let expect = x.zip_map(&r_star, |a, b| a + b).unwrap();
        assert!(out.enhanced.max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn zero_denoiser_telescopes() {
        let x = Grid2D::from_fn(4, 6, |i, j| (i * j) as f64 * 0.01);
        let c = cfg(9);
        let zero = |z: &Grid2D, _: &Grid2D, _: f64| Ok(Grid2D::zeros(z.height(), z.width()));
        let out = heun_sample(&zero, &x, &c).unwrap();
        let z_t = initial_state(4, 6, &c);
        let ratio = c.schedule.sigma_min() / c.schedule.sigma_max();
        let expect = x.zip_map(&z_t, |a, b| a + ratio * b).unwrap();
        assert!(out.enhanced.max_abs_diff(&expect).unwrap() < 1e-9);
    }

    #[test]
    fn trajectory_records_every_level() {
        let mut c = cfg(1);
        c.record_trajectory = true;
        let x = Grid2D::zeros(2, 2);
        let f = OracleDenoiser::constant(Grid2D::filled(2, 2, 0.5));
        let out = heun_sample(&f, &x, &c).unwrap();
        let tr = out.trajectory.unwrap();
        assert_eq!(tr.len(), c.schedule.num_steps());
        assert!(tr.windows(2).all(|w| w[0].sigma > w[1].sigma));

        c.terminal_euler_step = true;
        let tr = heun_sample(&f, &x, &c).unwrap().trajectory.unwrap();
        assert_eq!(tr.len(), c.schedule.num_steps() + 1);
        assert_eq!(tr.last().unwrap().sigma, 0.0);
        assert_eq!(tr.last().unwrap().z, Grid2D::filled(2, 2, 0.5));
    }

    #[test]
    fn deterministic_per_seed() {
        let x = Grid2D::from_fn(4, 4, |i, j| (i + j) as f64 / 8.0);
        let f = OracleDenoiser::new(Grid2D::zeros(4, 4), 0.5).unwrap();
        let a = heun_sample(&f, &x, &cfg(42)).unwrap().enhanced;
        let b = heun_sample(&f, &x, &cfg(42)).unwrap().enhanced;
        assert_eq!(a, b);
        let c = heun_sample(&f, &x, &cfg(43)).unwrap().enhanced;
        assert_ne!(a, c);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let x = Grid2D::zeros(2, 2);
        let bad = |z: &Grid2D, _: &Grid2D, sigma: f64| {
            Ok(if sigma < 1.0 { z.map(|_| f64::NAN) } else { z.clone() })
        };
        match heun_sample(&bad, &x, &cfg(0)) {
            Err(Error::Sampler { step, .. }) => assert!(step > 0),
            other => panic!("expected sampler error, got {other:?}"),
        }
    }

    #[test]
    fn direct_target_skips_fusion() {
        let x = Grid2D::filled(2, 2, 0.25);
        let f = OracleDenoiser::constant(Grid2D::filled(2, 2, 0.5));
        let c = SamplerConfig {
            terminal_euler_step: true,
            ..cfg(0)
        };
        let direct = enhance(&f, PredictionTarget::Direct, &x, &c).unwrap();
        let fused = enhance(&f, PredictionTarget::Residual, &x, &c).unwrap();
        assert!(direct.max_abs_diff(&Grid2D::filled(2, 2, 0.5)).unwrap() < 1e-9);
        assert!(fused.max_abs_diff(&Grid2D::filled(2, 2, 0.75)).unwrap() < 1e-9);
    }
}
