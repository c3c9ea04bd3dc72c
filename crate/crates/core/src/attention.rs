//! Radar-derived attention maps and the sigma-adaptive regional weight map.
//!
//! The chain is `intensity -> (signal strength, local consistency) ->
//! combined attention -> soft mask -> W_adapt`. Everything is computed per
//! image from the radar condition alone; no learned component is involved.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub alpha_low: f64,
    pub beta_low: f64,
    pub sigma_threshold: f64,
    /// Logistic slope of the soft mask.
    pub mask_steepness: f64,
    /// Attention level mapped to a mask value of 0.5.
    pub mask_center: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda_s: 0.5,
            lambda_c: 0.5,
            alpha_low: 2.0,
            beta_low: 1.0,
            sigma_threshold: 1.0,
            mask_steepness: 10.0,
            mask_center: 0.5,
        }
    }
}

impl GuidanceConfig {
    /// Checks the weight invariants and that the threshold lies strictly
    /// inside the schedule's noise range.
    pub fn validate(&self, sigma_min: f64, sigma_max: f64) -> Result<()> {
        if !(self.lambda_s >= 0.0 && self.lambda_c >= 0.0 && self.lambda_s + self.lambda_c > 0.0) {
            return Err(Error::param(format!(
                "need lambda_s, lambda_c >= 0 with positive sum, got ({}, {})",
                self.lambda_s, self.lambda_c
            )));
        }
        if !(self.beta_low > 0.0 && self.alpha_low >= self.beta_low) {
            return Err(Error::param(format!(
                "need alpha_low >= beta_low > 0, got ({}, {})",
                self.alpha_low, self.beta_low
            )));
        }
        if !(self.sigma_threshold > sigma_min && self.sigma_threshold < sigma_max) {
            return Err(Error::param(format!(
                "sigma_threshold {} outside ({sigma_min}, {sigma_max})",
                self.sigma_threshold
            )));
        }
        if !(self.mask_steepness > 0.0 && self.mask_steepness.is_finite()) {
            return Err(Error::param("mask_steepness must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mask_center) {
            return Err(Error::param("mask_center must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn min_max_normalize(grid: &Grid2D) -> Option<Grid2D> {
    let lo = grid.min();
    let hi = grid.max();
    let span = hi - lo;
    if !(span > 0.0) {
        return None;
    }
    Some(grid.map(|v| ((v - lo) / span).clamp(0.0, 1.0)))
}

/// Min-max normalized intensity. A flat map carries no priority and yields
/// all zeros.
pub fn signal_strength_attention(intensity: &Grid2D) -> Grid2D {
    min_max_normalize(intensity)
        .unwrap_or_else(|| Grid2D::zeros(intensity.height(), intensity.width()))
}

/// Population variance (divisor 9) over each 3x3 neighbourhood, with
/// replicate padding at the borders.
pub fn local_variance(intensity: &Grid2D) -> Result<Grid2D> {
    let (h, w) = intensity.shape();
    if h < 3 || w < 3 {
        return Err(Error::param(format!(
            "local variance needs at least a 3x3 grid, got {h}x{w}"
        )));
    }
    Ok(Grid2D::from_fn(h, w, |i, j| {
        let mut patch = [0.0; 9];
        let mut n = 0;
        for di in -1..=1isize {
            for dj in -1..=1isize {
                patch[n] = intensity.get_clamped(i as isize + di, j as isize + dj);
                n += 1;
            }
        }
        let mean = patch.iter().sum::<f64>() / 9.0;
        patch.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0
    }))
}

/// `1 - normalized variance`; a uniformly consistent map yields all ones.
pub fn consistency_attention(variance: &Grid2D) -> Grid2D {
    match min_max_normalize(variance) {
        Some(n) => n.map(|v| 1.0 - v),
        None => Grid2D::filled(variance.height(), variance.width(), 1.0),
    }
}

pub fn combine_attention(a1: &Grid2D, a2: &Grid2D, cfg: &GuidanceConfig) -> Result<Grid2D> {
    a1.zip_map(a2, |s, c| cfg.lambda_s * s + cfg.lambda_c * c)
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid thresholding of the attention map around `mask_center`.
pub fn soft_mask(attention: &Grid2D, cfg: &GuidanceConfig) -> Grid2D {
    attention.map(|a| logistic(cfg.mask_steepness * (a - cfg.mask_center)))
}

pub fn adaptive_weights(mask: &Grid2D, cfg: &GuidanceConfig) -> Grid2D {
    mask.map(|m| m * cfg.alpha_low + (1.0 - m) * cfg.beta_low)
}

/// Every intermediate of the attention chain for one radar image.
#[derive(Clone, Debug)]
pub struct AttentionMaps {
    pub signal: Grid2D,
    pub variance: Grid2D,
    pub consistency: Grid2D,
    pub combined: Grid2D,
    pub mask: Grid2D,
    pub weights: Grid2D,
}

pub fn attention_maps(intensity: &Grid2D, cfg: &GuidanceConfig) -> Result<AttentionMaps> {
    let signal = signal_strength_attention(intensity);
    let variance = local_variance(intensity)?;
    let consistency = consistency_attention(&variance);
    let combined = combine_attention(&signal, &consistency, cfg)?;
    let mask = soft_mask(&combined, cfg);
    let weights = adaptive_weights(&mask, cfg);
    Ok(AttentionMaps {
        signal,
        variance,
        consistency,
        combined,
        mask,
        weights,
    })
}

/// Shortcut for the regional weight map `W_adapt` of a radar image.
pub fn regional_weights(intensity: &Grid2D, cfg: &GuidanceConfig) -> Result<Grid2D> {
    Ok(attention_maps(intensity, cfg)?.weights)
}
