//! Flat key-value run configuration shared by every subcommand.

use std::path::Path;

use anyhow::{Context, Result};
use r3d::attention::GuidanceConfig;
use r3d::dataset::SceneConfig;
use r3d::denoiser::Architecture;
use r3d::diffusion::TrainConfig;
use r3d::sampler::SamplerConfig;
use r3d::schedule::NoiseSchedule;
use r3d::signal::{BevSpec, CfarParams, RadarFrameConfig, WindowKind};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every tunable of the workflow. Unknown keys are rejected; omitted keys
/// take the defaults listed in `r3d config --defaults`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // noise schedule
    pub rho: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub num_steps: usize,

    // regional guidance
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub alpha_low: f64,
    pub beta_low: f64,
    pub sigma_threshold: f64,
    pub mask_steepness: f64,
    pub mask_center: f64,

    // network and optimizer
    pub widths: Vec<usize>,
    pub emb_dim: usize,
    pub max_groups: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub w_max: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,

    // sampler
    pub terminal_euler_step: bool,

    // synthetic scenes
    pub height: usize,
    pub width: usize,
    pub walls_min: usize,
    pub walls_max: usize,
    pub boxes_min: usize,
    pub boxes_max: usize,
    pub dropout: f64,
    pub blur_width: usize,
    pub clutter_density: f64,
    pub jitter_std: f64,

    // metrics
    pub point_threshold: f64,
    pub fscore_tau: f64,
    pub activity_threshold: f64,

    // radar chain
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub num_tx: usize,
    pub num_rx: usize,
    pub range_crop_lo: usize,
    pub range_crop_hi: usize,
    pub range_resolution: f64,
    pub max_velocity: f64,
    pub angle_fft_size: usize,
    /// `blackman` or `rectangular`.
    pub window: String,
    pub cfar_guard: usize,
    pub cfar_train: usize,
    pub cfar_pfa: f64,
    /// BEV half-width in meters; the image covers `[-e, e] x [0, 2e]`.
    pub bev_extent: f64,
    pub bev_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = NoiseSchedule::default();
        let guidance = GuidanceConfig::default();
        let train = TrainConfig::default();
        let arch = Architecture::tiny();
        let scene = SceneConfig::default();
        let radar = RadarFrameConfig::default();
        Self {
            seed: 0,
            rho: schedule.rho(),
            sigma_min: schedule.sigma_min(),
            sigma_max: schedule.sigma_max(),
            num_steps: schedule.num_steps(),
            lambda_s: guidance.lambda_s,
            lambda_c: guidance.lambda_c,
            alpha_low: guidance.alpha_low,
            beta_low: guidance.beta_low,
            sigma_threshold: guidance.sigma_threshold,
            mask_steepness: guidance.mask_steepness,
            mask_center: guidance.mask_center,
            widths: arch.widths,
            emb_dim: arch.emb_dim,
            max_groups: arch.max_groups,
            batch_size: train.batch_size,
            steps: train.steps,
            learning_rate: train.learning_rate,
            momentum: train.momentum,
            w_max: train.w_max,
            grad_clip: train.grad_clip.unwrap_or(0.0),
            terminal_euler_step: false,
            height: scene.height,
            width: scene.width,
            walls_min: scene.walls.0,
            walls_max: scene.walls.1,
            boxes_min: scene.boxes.0,
            boxes_max: scene.boxes.1,
            dropout: scene.dropout,
            blur_width: scene.blur_width,
            clutter_density: scene.clutter_density,
            jitter_std: scene.jitter_std,
            point_threshold: r3d::metrics::DEFAULT_POINT_THRESHOLD,
            fscore_tau: r3d::metrics::DEFAULT_FSCORE_TAU,
            activity_threshold: r3d::metrics::DEFAULT_ACTIVITY_THRESHOLD,
            samples_per_chirp: radar.samples_per_chirp,
            chirps_per_frame: radar.chirps_per_frame,
            num_tx: radar.num_tx,
            num_rx: radar.num_rx,
            range_crop_lo: radar.range_crop.0,
            range_crop_hi: radar.range_crop.1,
            range_resolution: radar.range_resolution,
            max_velocity: radar.max_velocity,
            angle_fft_size: radar.angle_fft_size,
            window: "blackman".into(),
            cfar_guard: 2,
            cfar_train: 8,
            cfar_pfa: 1e-4,
            bev_extent: 8.0,
            bev_size: 64,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().trim().to_string()).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("config.toml"), self.to_toml())
            .with_context(|| format!("writing config echo into {}", dir.display()))
    }

    fn config_err(e: r3d::Error) -> anyhow::Error {
        CliError::Config(e.to_string()).into()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.rho, self.sigma_min, self.sigma_max, self.num_steps).map_err(Self::config_err)
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            lambda_s: self.lambda_s,
            lambda_c: self.lambda_c,
            alpha_low: self.alpha_low,
            beta_low: self.beta_low,
            sigma_threshold: self.sigma_threshold,
            mask_steepness: self.mask_steepness,
            mask_center: self.mask_center,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            widths: self.widths.clone(),
            emb_dim: self.emb_dim,
            max_groups: self.max_groups,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            schedule: self.schedule()?,
            guidance: self.guidance(),
            architecture: self.architecture(),
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: self.seed,
            w_max: self.w_max,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
        };
        cfg.validate().map_err(Self::config_err)?;
        Ok(cfg)
    }

    /// Sampler configuration for frame `index`; each frame draws its initial
    /// noise from `seed + index`.
    pub fn sampler_config(&self, index: usize, record_trajectory: bool) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            schedule: self.schedule()?,
            seed: self.seed.wrapping_add(index as u64),
            record_trajectory,
            terminal_euler_step: self.terminal_euler_step,
        })
    }

    pub fn scene_config(&self) -> Result<SceneConfig> {
        let cfg = SceneConfig {
            height: self.height,
            width: self.width,
            walls: (self.walls_min, self.walls_max),
            boxes: (self.boxes_min, self.boxes_max),
            dropout: self.dropout,
            blur_width: self.blur_width,
            clutter_density: self.clutter_density,
            jitter_std: self.jitter_std,
            seed: self.seed,
        };
        cfg.validate_for(self.architecture().downsampling_factor())
            .map_err(Self::config_err)?;
        Ok(cfg)
    }

    pub fn radar_config(&self) -> Result<RadarFrameConfig> {
        let window = match self.window.as_str() {
            "blackman" => WindowKind::Blackman,
            "rectangular" => WindowKind::Rectangular,
            other => {
                return Err(CliError::Config(format!("window must be blackman or rectangular, got {other:?}")).into())
            }
        };
        let cfg = RadarFrameConfig {
            samples_per_chirp: self.samples_per_chirp,
            chirps_per_frame: self.chirps_per_frame,
            num_tx: self.num_tx,
            num_rx: self.num_rx,
            range_crop: (self.range_crop_lo, self.range_crop_hi),
            range_resolution: self.range_resolution,
            max_velocity: self.max_velocity,
            angle_fft_size: self.angle_fft_size,
            window,
        };
        cfg.validate().map_err(Self::config_err)?;
        Ok(cfg)
    }

    pub fn cfar_params(&self) -> Result<CfarParams> {
        CfarParams::for_false_alarm_rate(self.cfar_guard, self.cfar_train, self.cfar_pfa).map_err(Self::config_err)
    }

    pub fn bev_spec(&self) -> Result<BevSpec> {
        if self.bev_size == 0 {
            return Err(CliError::Config("bev_size must be positive".into()).into());
        }
        let spec = BevSpec::centered(self.bev_extent, self.bev_size);
        spec.validate().map_err(Self::config_err)?;
        Ok(spec)
    }

    pub fn check_metric_thresholds(&self) -> Result<()> {
        if !(self.point_threshold > 0.0 && self.point_threshold < 1.0) {
            return Err(CliError::Config("point_threshold must lie in (0, 1)".into()).into());
        }
        if !(self.fscore_tau > 0.0) {
            return Err(CliError::Config("fscore_tau must be positive".into()).into());
        }
        if !(self.activity_threshold >= 0.0) {
            return Err(CliError::Config("activity_threshold must be nonnegative".into()).into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RunConfig::parse("seed = 7\nalpha_low = 1.5\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.alpha_low, 1.5);
        assert_eq!(cfg.beta_low, RunConfig::default().beta_low);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("sede = 7\n").unwrap_err();
        assert!(matches!(err.downcast_ref::<CliError>(), Some(CliError::Config(_))));
    }

    #[test]
    fn derived_configs_validate() {
        let cfg = RunConfig::default();
        cfg.train_config().unwrap();
        cfg.scene_config().unwrap();
        cfg.radar_config().unwrap();
        cfg.cfar_params().unwrap();
        cfg.bev_spec().unwrap();
        cfg.check_metric_thresholds().unwrap();
        let bad = RunConfig {
            window: "hann".into(),
            ..RunConfig::default()
        };
        assert!(bad.radar_config().is_err());
    }
}
