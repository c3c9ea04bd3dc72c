//! Range, doppler and angle transforms over the radar cube. Forward FFTs
//! are unnormalized.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::adc::AdcTensor;
use super::window::window;
use super::RadarFrameConfig;
use crate::error::{Error, Result};

/// Complex cube indexed `(range bin, doppler bin, virtual antenna)`. Before
/// the doppler transform the second axis holds chirps.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarCube {
    pub range_bins: usize,
    pub doppler_bins: usize,
    pub antennas: usize,
    pub data: Vec<Complex64>,
}

impl RadarCube {
    #[inline]
    pub fn index(&self, range: usize, doppler: usize, antenna: usize) -> usize {
        (range * self.doppler_bins + doppler) * self.antennas + antenna
    }

    pub fn get(&self, range: usize, doppler: usize, antenna: usize) -> Complex64 {
        self.data[self.index(range, doppler, antenna)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Power spectrum indexed `(range bin, doppler bin, angle bin)`, angle axis
/// centered so bin `n_angle / 2` is boresight.
#[derive(Clone, Debug, PartialEq)]
pub struct RdaSpectrum {
    pub range_bins: usize,
    pub doppler_bins: usize,
    pub angle_bins: usize,
    pub power: Vec<f64>,
}

impl RdaSpectrum {
    #[inline]
    pub fn index(&self, range: usize, doppler: usize, angle: usize) -> usize {
        (range * self.doppler_bins + doppler) * self.angle_bins + angle
    }

    pub fn get(&self, range: usize, doppler: usize, angle: usize) -> f64 {
        self.power[self.index(range, doppler, angle)]
    }
}

/// Signed doppler bin of an unshifted FFT index.
pub fn signed_doppler_bin(bin: usize, n: usize) -> i64 {
    if bin < n.div_ceil(2) {
        bin as i64
    } else {
        bin as i64 - n as i64
    }
}

/// In-place unnormalized forward DFT.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Windowed FFT along fast time, then crop to `cfg.range_crop`.
pub fn range_fft(samples: &AdcTensor, cfg: &RadarFrameConfig) -> Result<RadarCube> {
    cfg.validate()?;
    if samples.samples != cfg.samples_per_chirp || samples.chirps != cfg.chirps_per_frame || samples.antennas != cfg.virtual_antennas() {
        return Err(Error::format(0, "sample tensor does not match the frame configuration"));
    }
    let ns = cfg.samples_per_chirp;
    let win = window(cfg.window, ns)?;
    let (lo, hi) = cfg.range_crop;
    let fft = FftPlanner::new().plan_fft_forward(ns);
    let mut cube = RadarCube {
        range_bins: hi - lo,
        doppler_bins: samples.chirps,
        antennas: samples.antennas,
        data: vec![Complex64::new(0.0, 0.0); (hi - lo) * samples.chirps * samples.antennas],
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); ns];
    for c in 0..samples.chirps {
        for a in 0..samples.antennas {
            for (s, b) in buf.iter_mut().enumerate() {
                *b = samples.get(c, a, s) * win[s];
            }
            fft.process(&mut buf);
            for r in lo..hi {
                let idx = cube.index(r - lo, c, a);
                cube.data[idx] = buf[r];
            }
        }
    }
    Ok(cube)
}

/// FFT along the chirp axis.
pub fn doppler_fft(cube: &RadarCube, cfg: &RadarFrameConfig) -> Result<RadarCube> {
    if cube.doppler_bins != cfg.chirps_per_frame || cube.antennas != cfg.virtual_antennas() {
        return Err(Error::format(0, "cube does not match the frame configuration"));
    }
    let n = cube.doppler_bins;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut out = cube.clone();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for r in 0..cube.range_bins {
        for a in 0..cube.antennas {
            for (d, b) in buf.iter_mut().enumerate() {
                *b = cube.get(r, d, a);
            }
            fft.process(&mut buf);
            for (d, v) in buf.iter().enumerate() {
                let idx = out.index(r, d, a);
                out.data[idx] = *v;
            }
        }
    }
    Ok(out)
}

/// Removes the TDM-MIMO doppler phase: channel of transmitter `m` is rotated
/// by `exp(-j * 2 pi * m * b / (num_tx * N_c))` for signed doppler bin `b`.
/// With two transmitters this is `exp(-j * pi * m * b / N_c)`.
pub fn velocity_compensate(cube: &RadarCube, cfg: &RadarFrameConfig) -> RadarCube {
    let mut out = cube.clone();
    let n = cube.doppler_bins;
    let ntx = cfg.num_tx as f64;
    for r in 0..cube.range_bins {
        for d in 0..n {
            let b = signed_doppler_bin(d, n) as f64;
            for a in 0..cube.antennas {
                let m = (a / cfg.num_rx) as f64;
                if m == 0.0 || b == 0.0 {
                    continue;
                }
                let rot = Complex64::from_polar(1.0, -2.0 * PI * m * b / (ntx * n as f64));
                let idx = out.index(r, d, a);
                out.data[idx] *= rot;
            }
        }
    }
    out
}

/// Zero-padded FFT across the virtual array, returned as a centered power
/// spectrum.
pub fn angle_fft(cube: &RadarCube, cfg: &RadarFrameConfig) -> Result<RdaSpectrum> {
    let na = cfg.angle_fft_size;
    if cube.antennas != cfg.virtual_antennas() || na < cube.antennas {
        return Err(Error::format(0, "angle FFT size smaller than the virtual array"));
    }
    let fft = FftPlanner::new().plan_fft_forward(na);
    let mut spec = RdaSpectrum {
        range_bins: cube.range_bins,
        doppler_bins: cube.doppler_bins,
        angle_bins: na,
        power: vec![0.0; cube.range_bins * cube.doppler_bins * na],
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); na];
    for r in 0..cube.range_bins {
        for d in 0..cube.doppler_bins {
            buf.fill(Complex64::new(0.0, 0.0));
            for a in 0..cube.antennas {
                buf[a] = cube.get(r, d, a);
            }
            fft.process(&mut buf);
            for k in 0..na {
                let shifted = (k + na / 2) % na;
                let idx = spec.index(r, d, shifted);
                spec.power[idx] = buf[k].norm_sqr();
            }
        }
    }
    Ok(spec)
}

/// `sin(azimuth)` for a centered angle bin, half-wavelength spacing.
pub fn angle_bin_sine(bin: usize, n_angle: usize) -> f64 {
    2.0 * (bin as f64 - (n_angle / 2) as f64) / n_angle as f64
}
