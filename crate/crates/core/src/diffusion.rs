//! Residual construction, forward noising, the uniform and sigma-adaptive
//! objectives, and the training loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::attention::{regional_weights, GuidanceConfig};
use crate::denoiser::{self, Architecture, Checkpoint, DenoiserParams, InitOptions, PredictionTarget};
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::schedule::{karras_weight, NoiseSchedule};

/// One radar/LiDAR pair together with its residual `r = y - x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    radar: Grid2D,
    lidar: Grid2D,
    residual: Grid2D,
}

impl PairedSample {
    pub fn new(radar: Grid2D, lidar: Grid2D) -> Result<Self> {
        let residual = compute_residual(&lidar, &radar)?;
        Ok(Self {
            radar,
            lidar,
            residual,
        })
    }

    pub fn radar(&self) -> &Grid2D {
        &self.radar
    }

    pub fn lidar(&self) -> &Grid2D {
        &self.lidar
    }

    pub fn residual(&self) -> &Grid2D {
        &self.residual
    }

    pub fn shape(&self) -> (usize, usize) {
        self.radar.shape()
    }
}

pub fn compute_residual(y: &Grid2D, x: &Grid2D) -> Result<Grid2D> {
    y.zip_map(x, |a, b| a - b)
}

/// `z = r + sigma * eps`.
pub fn forward_noise(r: &Grid2D, sigma: f64, eps: &Grid2D) -> Result<Grid2D> {
    if !(sigma >= 0.0) {
        return Err(Error::param(format!("sigma must be nonnegative, got {sigma}")));
    }
    r.zip_map(eps, |rv, e| rv + sigma * e)
}

pub fn standard_normal_grid<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Grid2D {
    Grid2D::from_fn(height, width, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn weighted_mse(r_hat: &Grid2D, r: &Grid2D, weight: f64, regional: Option<&Grid2D>) -> Result<f64> {
    r_hat.ensure_same_shape(r)?;
    let sum: f64 = match regional {
        None => r_hat
            .values()
            .iter()
            .zip(r.values())
            .map(|(a, b)| (b - a) * (b - a))
            .sum(),
        Some(wm) => {
            r_hat.ensure_same_shape(wm)?;
            r_hat
                .values()
                .iter()
                .zip(r.values())
                .zip(wm.values())
                .map(|((a, b), m)| {
                    let e = m * (b - a);
                    e * e
                })
                .sum()
        }
    };
    Ok(sum / r.len() as f64 * weight)
}

fn weighted_mse_grad(r_hat: &Grid2D, r: &Grid2D, weight: f64, regional: Option<&Grid2D>) -> Result<Grid2D> {
    let scale = 2.0 * weight / r.len() as f64;
    match regional {
        None => r_hat.zip_map(r, |a, b| scale * (a - b)),
        Some(wm) => {
            let diff = r_hat.zip_map(r, |a, b| scale * (a - b))?;
            diff.zip_map(wm, |d, m| d * m * m)
        }
    }
}

/// `w(sigma) * mean((r - r_hat)^2)`.
pub fn residual_loss(r_hat: &Grid2D, r: &Grid2D, sigma: f64) -> Result<f64> {
    weighted_mse(r_hat, r, karras_weight(sigma)?, None)
}

/// Gradient of [`residual_loss`] with respect to `r_hat`.
pub fn residual_loss_grad(r_hat: &Grid2D, r: &Grid2D, sigma: f64) -> Result<Grid2D> {
    weighted_mse_grad(r_hat, r, karras_weight(sigma)?, None)
}

/// Uniform loss above `sigma_threshold`; below it the error is weighted
/// pixelwise by `w_adapt` before squaring.
pub fn r3d_loss(r_hat: &Grid2D, r: &Grid2D, sigma: f64, w_adapt: &Grid2D, cfg: &GuidanceConfig) -> Result<f64> {
    if sigma > cfg.sigma_threshold {
        residual_loss(r_hat, r, sigma)
    } else {
        weighted_mse(r_hat, r, karras_weight(sigma)?, Some(w_adapt))
    }
}

pub fn r3d_loss_grad(r_hat: &Grid2D, r: &Grid2D, sigma: f64, w_adapt: &Grid2D, cfg: &GuidanceConfig) -> Result<Grid2D> {
    if sigma > cfg.sigma_threshold {
        residual_loss_grad(r_hat, r, sigma)
    } else {
        weighted_mse_grad(r_hat, r, karras_weight(sigma)?, Some(w_adapt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    /// Learn `y` directly from noise (baseline).
    Direct,
    /// Learn the residual with uniform weighting.
    Residual,
    /// Learn the residual with sigma-adaptive regional weighting.
    R3d,
}

impl TrainMode {
    pub fn target(self) -> PredictionTarget {
        match self {
            TrainMode::Direct => PredictionTarget::Direct,
            TrainMode::Residual | TrainMode::R3d => PredictionTarget::Residual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Direct => "direct",
            TrainMode::Residual => "residual",
            TrainMode::R3d => "r3d",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(TrainMode::Direct),
            "residual" => Ok(TrainMode::Residual),
            "r3d" => Ok(TrainMode::R3d),
            other => Err(Error::param(format!(
                "unknown mode '{other}' (expected direct, residual or r3d)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub schedule: NoiseSchedule,
    pub guidance: GuidanceConfig,
    pub architecture: Architecture,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Upper bound applied to `w(sigma)`.
    pub w_max: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            guidance: GuidanceConfig::default(),
            architecture: Architecture::default(),
            batch_size: 8,
            steps: 4000,
            learning_rate: 0.001,
            momentum: 0.9,
            seed: 0,
            w_max: 1e6,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::param("step count must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum must lie in [0, 1)"));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::param("w_max must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::param("grad_clip must be positive"));
            }
        }
        self.architecture.validate()?;
        self.guidance
            .validate(self.schedule.sigma_min(), self.schedule.sigma_max())
    }
}

/// One logged batch item.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub t: usize,
    pub sigma: f64,
    /// Unweighted mean squared error.
    pub loss: f64,
    /// The objective actually optimized for this item.
    pub weighted_loss: f64,
    /// Whether the regional weight map entered the objective.
    pub guided: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub mode: Option<TrainMode>,
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "step,t,sigma,loss,weighted_loss,mode,guided";

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let mode = self.mode.map(TrainMode::as_str).unwrap_or("");
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{},{}",
                r.step, r.t, r.sigma, r.loss, r.weighted_loss, mode, r.guided as u8
            )?;
        }
        Ok(())
    }

    /// Mean weighted loss over the steps in `range`.
    pub fn mean_weighted_loss(&self, steps: std::ops::Range<usize>) -> f64 {
        let sel: Vec<f64> = self
            .records
            .iter()
            .filter(|r| steps.contains(&r.step))
            .map(|r| r.weighted_loss)
            .collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

struct BatchItem {
    sample: usize,
    t: usize,
    sigma: f64,
    eps: Grid2D,
}

struct ItemResult {
    loss: f64,
    weighted_loss: f64,
    guided: bool,
    grad: Vec<f64>,
}

fn item_gradient(
    params: &DenoiserParams,
    sample: &PairedSample,
    item: &BatchItem,
    mode: TrainMode,
    cfg: &TrainConfig,
    w_adapt: Option<&Grid2D>,
) -> Result<ItemResult> {
    let target = match mode {
        TrainMode::Direct => sample.lidar(),
        TrainMode::Residual | TrainMode::R3d => sample.residual(),
    };
    let z = forward_noise(target, item.sigma, &item.eps)?;
    let (r_hat, tape) = denoiser::forward(params, &z, sample.radar(), item.sigma)?;
    let weight = karras_weight(item.sigma)?.min(cfg.w_max);
    let regional = match (mode, w_adapt) {
        (TrainMode::R3d, Some(wm)) if item.sigma <= cfg.guidance.sigma_threshold => Some(wm),
        _ => None,
    };
    let loss = weighted_mse(&r_hat, target, 1.0, None)?;
    let weighted_loss = weighted_mse(&r_hat, target, weight, regional)?;
    let d_out = weighted_mse_grad(&r_hat, target, weight, regional)?;
    let grad = denoiser::backward(params, &tape, &d_out)?;
    Ok(ItemResult {
        loss,
        weighted_loss,
        guided: regional.is_some(),
        grad,
    })
}

/// Trains a denoiser on `dataset` with momentum gradient descent.
///
/// All randomness is drawn sequentially from `cfg.seed`; batch items may be
/// evaluated in parallel but gradients are summed in batch order, so the
/// result does not depend on the thread count.
pub fn train(dataset: &[PairedSample], cfg: &TrainConfig, mode: TrainMode) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::param("training dataset is empty"));
    }
    cfg.validate()?;
    let shape = dataset[0].shape();
    if let Some(bad) = dataset.iter().find(|s| s.shape() != shape) {
        return Err(Error::Shape {
            expected: shape,
            got: bad.shape(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DenoiserParams::init(cfg.architecture.clone(), &mut rng, InitOptions::default())?;
    let regional: Vec<Grid2D> = if mode == TrainMode::R3d {
        dataset
            .par_iter()
            .map(|s| regional_weights(s.radar(), &cfg.guidance))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let mut velocity = vec![0.0; params.len()];
    let mut log = TrainLog {
        mode: Some(mode),
        records: Vec::with_capacity(cfg.steps * cfg.batch_size),
    };
    let (h, w) = shape;

    for step in 0..cfg.steps {
        let batch: Vec<BatchItem> = (0..cfg.batch_size)
            .map(|_| {
                let sample = rng.random_range(0..dataset.len());
                let (t, sigma) = cfg.schedule.draw_timestep(&mut rng);
                let eps = standard_normal_grid(&mut rng, h, w);
                BatchItem {
                    sample,
                    t,
                    sigma,
                    eps,
                }
            })
            .collect();

        let results: Vec<ItemResult> = batch
            .par_iter()
            .map(|item| {
                item_gradient(
                    &params,
                    &dataset[item.sample],
                    item,
                    mode,
                    cfg,
                    regional.get(item.sample),
                )
            })
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; params.len()];
        for (k, (item, res)) in batch.iter().zip(&results).enumerate() {
            if !(res.weighted_loss.is_finite() && res.loss.is_finite()) {
                return Err(Error::Training {
                    step,
                    batch_item: k,
                    sigma: item.sigma,
                    message: format!("non-finite loss {}", res.weighted_loss),
                });
            }
            log.records.push(TrainRecord {
                step,
                t: item.t,
                sigma: item.sigma,
                loss: res.loss,
                weighted_loss: res.weighted_loss,
                guided: res.guided,
            });
            for (g, v) in grad.iter_mut().zip(&res.grad) {
                *g += v;
            }
        }
        let inv = 1.0 / cfg.batch_size as f64;
        grad.iter_mut().for_each(|g| *g *= inv);

        if let Some(clip) = cfg.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let s = clip / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        for ((p, v), g) in params.values_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *p += *v;
        }
        if !params.is_finite() {
            let last = batch.last().expect("batch is nonempty");
            return Err(Error::Training {
                step,
                batch_item: batch.len() - 1,
                sigma: last.sigma,
                message: "parameters became non-finite".into(),
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            target: mode.target(),
            params,
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, seed: u64) -> Grid2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid2D::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn residual_examples() {
        let x = grid(4, 5, 1);
        assert!(compute_residual(&x, &x).unwrap().values().iter().all(|&v| v == 0.0));
        let y = grid(4, 5, 2);
        assert_eq!(compute_residual(&y, &Grid2D::zeros(4, 5)).unwrap(), y);
        let r = compute_residual(&y, &x).unwrap();
        let back = r.zip_map(&x, |a, b| a + b).unwrap();
        // y - x + x can round; reconstruction must stay within an ulp-scale bound
        assert!(back.max_abs_diff(&y).unwrap() <= 4.0 * f64::EPSILON);
        assert!(compute_residual(&y, &Grid2D::zeros(5, 4)).is_err());
    }

    #[test]
    fn forward_noise_examples() {
        let r = grid(3, 3, 3);
        let eps = grid(3, 3, 4);
        assert_eq!(forward_noise(&r, 0.0, &eps).unwrap(), r);
        assert_eq!(forward_noise(&r, 5.0, &Grid2D::zeros(3, 3)).unwrap(), r);
        assert!(forward_noise(&r, 1.0, &Grid2D::zeros(2, 3)).is_err());
    }

    #[test]
    fn forward_noise_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let r = grid(10, 10, 5);
        let draws = 100; // 100 draws x 100 pixels = 10^4 samples
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..draws {
            let eps = standard_normal_grid(&mut rng, 10, 10);
            let z = forward_noise(&r, 2.0, &eps).unwrap();
            for (a, b) in z.values().iter().zip(r.values()) {
                sum += a - b;
                sq += (a - b) * (a - b);
            }
        }
        let n = 10_000.0;
        let mean = sum / n;
        let var = sq / n - mean * mean;
        assert!(mean.abs() < 4.0 * 2.0 / 100.0, "mean {mean}");
        assert!((var - 4.0).abs() < 0.05 * 4.0, "var {var}");
    }

    #[test]
    fn residual_loss_examples() {
        let r = grid(4, 4, 6);
        assert_eq!(residual_loss(&r, &r, 0.3).unwrap(), 0.0);
        let off = r.map(|v| v + 1.0);
        assert!((residual_loss(&off, &r, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((residual_loss(&off, &r, 2.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn r3d_loss_identities() {
        let cfg = GuidanceConfig::default();
        let r = grid(6, 6, 7);
        let r_hat = grid(6, 6, 8);
        let wmap = grid(6, 6, 9).map(|v| 1.0 + v.abs());
        let above = cfg.sigma_threshold * 1.5;
        assert_eq!(
            r3d_loss(&r_hat, &r, above, &wmap, &cfg).unwrap().to_bits(),
            residual_loss(&r_hat, &r, above).unwrap().to_bits()
        );
        let below = cfg.sigma_threshold * 0.5;
        let ones = Grid2D::filled(6, 6, 1.0);
        assert_eq!(
            r3d_loss(&r_hat, &r, below, &ones, &cfg).unwrap().to_bits(),
            residual_loss(&r_hat, &r, below).unwrap().to_bits()
        );
        let twos = Grid2D::filled(6, 6, 2.0);
        assert_eq!(
            r3d_loss(&r_hat, &r, below, &twos, &cfg).unwrap().to_bits(),
            (4.0 * residual_loss(&r_hat, &r, below).unwrap()).to_bits()
        );
        // at the threshold itself the regional branch applies
        let at = cfg.sigma_threshold;
        assert_eq!(
            r3d_loss(&r_hat, &r, at, &twos, &cfg).unwrap(),
            4.0 * residual_loss(&r_hat, &r, at).unwrap()
        );
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let cfg = GuidanceConfig::default();
        let r = grid(3, 4, 10);
        let r_hat = grid(3, 4, 11);
        let wmap = grid(3, 4, 12).map(|v| 1.0 + v.abs());
        for sigma in [0.5, 2.0] {
            let g = r3d_loss_grad(&r_hat, &r, sigma, &wmap, &cfg).unwrap();
            let gr = residual_loss_grad(&r_hat, &r, sigma).unwrap();
            for k in 0..r.len() {
                let mut up = r_hat.clone();
                let mut dn = r_hat.clone();
                up.values_mut()[k] += 1e-6;
                dn.values_mut()[k] -= 1e-6;
                let fd = (r3d_loss(&up, &r, sigma, &wmap, &cfg).unwrap()
                    - r3d_loss(&dn, &r, sigma, &wmap, &cfg).unwrap())
                    / 2e-6;
                assert!((fd - g.values()[k]).abs() < 1e-6 * (1.0 + fd.abs()));
                let fdr = (residual_loss(&up, &r, sigma).unwrap() - residual_loss(&dn, &r, sigma).unwrap()) / 2e-6;
                assert!((fdr - gr.values()[k]).abs() < 1e-6 * (1.0 + fdr.abs()));
                // closed form -2 w (r - r_hat) / N
                let closed = -2.0 / (sigma * sigma) * (r.values()[k] - r_hat.values()[k]) / r.len() as f64;
                assert!((gr.values()[k] - closed).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn mode_parsing() {
        for m in [TrainMode::Direct, TrainMode::Residual, TrainMode::R3d] {
            assert_eq!(m.as_str().parse::<TrainMode>().unwrap(), m);
        }
        assert!("edm".parse::<TrainMode>().is_err());
    }

    #[test]
    fn train_rejects_empty_dataset() {
        assert!(matches!(train(&[], &TrainConfig::default(), TrainMode::Residual), Err(Error::Parameter(_))));
    }
}
