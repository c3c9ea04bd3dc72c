//! Polar-to-Cartesian conversion and image rasterization.

use super::fft::{angle_bin_sine, RdaSpectrum};
use super::{Detection, RadarFrameConfig};
use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Cartesian detection: `x` lateral (positive right), `y` forward, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub snr_db: f64,
}

/// BEV extent in meters and pixel size in meters per pixel. Row 0 is the far
/// edge `y_max`; column 0 is the left edge `x_min`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BevSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub resolution: f64,
}

impl BevSpec {
    /// Square `size`×`size` image covering `[-extent, extent] × [0, 2 extent]`.
    pub fn centered(extent: f64, size: usize) -> Self {
        Self {
            x_min: -extent,
            x_max: extent,
            y_min: 0.0,
            y_max: 2.0 * extent,
            resolution: 2.0 * extent / size as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.resolution > 0.0
            && self.resolution.is_finite()
            && self.x_max > self.x_min
            && self.y_max > self.y_min
            && [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::param("BEV extent must be finite and non-empty with positive resolution"))
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        let h = ((self.y_max - self.y_min) / self.resolution - 1e-9).ceil() as usize;
        let w = ((self.x_max - self.x_min) / self.resolution - 1e-9).ceil() as usize;
        (h.max(1), w.max(1))
    }

    /// Pixel `(row, col)` containing a point, or `None` outside the extent.
    pub fn cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max && y > self.y_min && y <= self.y_max) {
            return None;
        }
        let (h, w) = self.shape();
        let row = ((self.y_max - y) / self.resolution).floor() as usize;
        let col = ((x - self.x_min) / self.resolution).floor() as usize;
        (row < h && col < w).then_some((row, col))
    }
}

/// Range in meters and azimuth in radians of a detection.
pub fn detection_polar(det: &Detection, cfg: &RadarFrameConfig) -> (f64, f64) {
    let range = (cfg.range_crop.0 + det.range_bin) as f64 * cfg.range_resolution;
    let s = angle_bin_sine(det.angle_bin, cfg.angle_fft_size).clamp(-1.0, 1.0);
    (range, s.asin())
}

/// `x = r sin(theta)`, `y = r cos(theta)`.
pub fn detections_to_points(dets: &[Detection], cfg: &RadarFrameConfig) -> Vec<RadarPoint> {
    dets.iter()
        .map(|d| {
            let (r, theta) = detection_polar(d, cfg);
            RadarPoint {
                x: r * theta.sin(),
                y: r * theta.cos(),
                snr_db: d.snr_db,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BevImage {
    pub image: Grid2D,
    /// Points that fell outside the extent.
    pub dropped: usize,
}

/// Rasterizes points with their SNR as intensity. Each pixel keeps the
/// largest SNR (floored at 0 dB) among its points; empty pixels are 0 and the
/// whole image is then min-max normalized to `[0, 1]`.
pub fn rasterize_bev(points: &[RadarPoint], spec: &BevSpec) -> Result<BevImage> {
    spec.validate()?;
    let (h, w) = spec.shape();
    let mut image = Grid2D::zeros(h, w);
    let mut dropped = 0;
    for p in points {
        match spec.cell(p.x, p.y) {
            Some(rc) => {
                let v = p.snr_db.max(0.0);
                if v > image[rc] {
                    image[rc] = v;
                }
            }
            None => dropped += 1,
        }
    }
    Ok(BevImage {
        image: min_max_normalize(&image),
        dropped,
    })
}

/// Range × azimuth image in dB, integrated over doppler and min-max
/// normalized.
pub fn rasterize_polar(spectrum: &RdaSpectrum) -> Grid2D {
    let map = range_angle_power(spectrum);
    let db = map.map(|p| 10.0 * (p + f64::MIN_POSITIVE).log10());
    min_max_normalize(&db)
}

/// Sums the power spectrum over the doppler axis.
pub fn range_angle_power(spectrum: &RdaSpectrum) -> Grid2D {
    Grid2D::from_fn(spectrum.range_bins, spectrum.angle_bins, |r, a| {
        (0..spectrum.doppler_bins).map(|d| spectrum.get(r, d, a)).sum()
    })
}

/// Maps `[min, max]` to `[0, 1]`; a flat image maps to zeros.
pub fn min_max_normalize(g: &Grid2D) -> Grid2D {
    let (lo, hi) = (g.min(), g.max());
    if hi > lo {
        g.map(|v| (v - lo) / (hi - lo))
    } else {
        Grid2D::zeros(g.height(), g.width())
    }
}
