//! mmWave FMCW processing chain: raw int16 ADC frames to range, doppler and
//! angle spectra, order-statistic CFAR detections, Cartesian points, and
//! polar/BEV images with SNR intensity.

mod adc;
mod cfar;
mod fft;
mod raster;
mod window;

pub use adc::{
    interleave_adc, read_raw_frame, reshape_adc, simulate_adc, write_raw_frame, AdcLayout, AdcTensor, RawHeader,
    SimTarget, RAW_MAGIC, RAW_VERSION,
};
pub use cfar::{alpha_for_pfa, os_cfar, os_cfar_pfa, truncated_order, CfarHit, CfarParams};
pub use fft::{
    angle_bin_sine, angle_fft, doppler_fft, fft_in_place, range_fft, signed_doppler_bin, velocity_compensate,
    RadarCube, RdaSpectrum,
};
pub use raster::{
    detection_polar, detections_to_points, min_max_normalize, range_angle_power, rasterize_bev, rasterize_polar,
    BevImage, BevSpec, RadarPoint,
};
pub use window::{blackman_window, window, WindowKind};

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Structural constants of one radar frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarFrameConfig {
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub num_tx: usize,
    pub num_rx: usize,
    /// Range bins kept after the range FFT, `[lo, hi)`.
    pub range_crop: (usize, usize),
    /// Meters per range bin.
    pub range_resolution: f64,
    /// Maximum unambiguous velocity in m/s.
    pub max_velocity: f64,
    pub angle_fft_size: usize,
    pub window: WindowKind,
}

impl Default for RadarFrameConfig {
    fn default() -> Self {
        Self {
            samples_per_chirp: 128,
            chirps_per_frame: 32,
            num_tx: 2,
            num_rx: 4,
            range_crop: (4, 124),
            range_resolution: 0.125,
            max_velocity: 2.5,
            angle_fft_size: 64,
            window: WindowKind::Blackman,
        }
    }
}

impl RadarFrameConfig {
    pub fn virtual_antennas(&self) -> usize {
        self.num_tx * self.num_rx
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_chirp == 0 || self.chirps_per_frame == 0 || self.num_tx == 0 || self.num_rx == 0 {
            return Err(Error::param("samples, chirps, tx and rx counts must be at least 1"));
        }
        let (lo, hi) = self.range_crop;
        if lo >= hi || hi > self.samples_per_chirp {
            return Err(Error::param(format!(
                "range crop [{lo}, {hi}) must satisfy lo < hi <= {}",
                self.samples_per_chirp
            )));
        }
        if !(self.range_resolution > 0.0 && self.range_resolution.is_finite()) {
            return Err(Error::param("range resolution must be positive"));
        }
        if !(self.max_velocity > 0.0 && self.max_velocity.is_finite()) {
            return Err(Error::param("max velocity must be positive"));
        }
        if self.angle_fft_size < self.virtual_antennas() {
            return Err(Error::param(format!(
                "angle FFT size {} is smaller than the {} virtual antennas",
                self.angle_fft_size,
                self.virtual_antennas()
            )));
        }
        if self.window == WindowKind::Blackman && self.samples_per_chirp < 2 {
            return Err(Error::param("Blackman window needs at least 2 samples per chirp"));
        }
        Ok(())
    }

    /// Radial velocity in m/s of a signed doppler bin.
    pub fn doppler_velocity(&self, signed_bin: i64) -> f64 {
        2.0 * self.max_velocity * signed_bin as f64 / self.chirps_per_frame as f64
    }
}

/// One CFAR detection in spectrum coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    /// Index into the cropped range axis.
    pub range_bin: usize,
    /// Unshifted doppler FFT index.
    pub doppler_bin: usize,
    /// Centered angle index.
    pub angle_bin: usize,
    pub snr_db: f64,
}

/// Runs CFAR on the doppler-integrated range × angle power map and assigns
/// each hit the doppler bin of peak power.
pub fn detect(spectrum: &RdaSpectrum, params: &CfarParams) -> Result<Vec<Detection>> {
    let map = range_angle_power(spectrum);
    let hits = os_cfar(&map, params)?;
    Ok(hits
        .into_iter()
        .map(|h| {
            let mut best = 0;
            for d in 1..spectrum.doppler_bins {
                if spectrum.get(h.row, d, h.col) > spectrum.get(h.row, best, h.col) {
                    best = d;
                }
            }
            Detection {
                range_bin: h.row,
                doppler_bin: best,
                angle_bin: h.col,
                snr_db: h.snr_db,
            }
        })
        .collect())
}

/// Everything produced from one raw frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput {
    pub detections: Vec<Detection>,
    pub points: Vec<RadarPoint>,
    pub bev: BevImage,
    pub polar: Grid2D,
}

/// Full chain from interleaved int16 samples to points and images.
pub fn process_frame(
    raw: &[i16],
    cfg: &RadarFrameConfig,
    layout: AdcLayout,
    cfar: &CfarParams,
    bev: &BevSpec,
) -> Result<FrameOutput> {
    let samples = reshape_adc(raw, cfg, layout)?;
    let range = range_fft(&samples, cfg)?;
    let rd = doppler_fft(&range, cfg)?;
    let rd = velocity_compensate(&rd, cfg);
    let spectrum = angle_fft(&rd, cfg)?;
    let detections = detect(&spectrum, cfar)?;
    let points = detections_to_points(&detections, cfg);
    let bev = rasterize_bev(&points, bev)?;
    let polar = rasterize_polar(&spectrum);
    Ok(FrameOutput {
        detections,
        points,
        bev,
        polar,
    })
}
