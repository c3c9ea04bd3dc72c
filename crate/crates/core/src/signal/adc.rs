//! Raw ADC frames: interleaved int16 I/Q reshaping and the `R3DA` file format.
//!
//! File layout (little-endian): magic `R3DA`, version `u16`, layout `u16`,
//! `samples_per_chirp u32`, `chirps_per_frame u32`, `num_tx u32`,
//! `num_rx u32`, then `2 * Ns * Nc * tx * rx` int16 values (I then Q).

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;

use super::RadarFrameConfig;
use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"R3DA";
pub const RAW_VERSION: u16 = 1;

/// Nesting order of the interleaved I/Q pairs, outermost first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdcLayout {
    /// chirp, tx, rx, sample.
    #[default]
    ChirpTxRxSample,
    /// chirp, tx, sample, rx.
    ChirpTxSampleRx,
}

impl AdcLayout {
    pub fn code(self) -> u16 {
        match self {
            AdcLayout::ChirpTxRxSample => 0,
            AdcLayout::ChirpTxSampleRx => 1,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(AdcLayout::ChirpTxRxSample),
            1 => Some(AdcLayout::ChirpTxSampleRx),
            _ => None,
        }
    }

    /// Position of the I/Q pair for `(chirp, tx, rx, sample)`.
    fn pair_index(self, cfg: &RadarFrameConfig, chirp: usize, tx: usize, rx: usize, sample: usize) -> usize {
        let (ns, ntx, nrx) = (cfg.samples_per_chirp, cfg.num_tx, cfg.num_rx);
        let block = chirp * ntx + tx;
        match self {
            AdcLayout::ChirpTxRxSample => (block * nrx + rx) * ns + sample,
            AdcLayout::ChirpTxSampleRx => (block * ns + sample) * nrx + rx,
        }
    }
}

/// Complex samples indexed `(chirp, virtual antenna, sample)`; the virtual
/// antenna of `(tx, rx)` is `tx * num_rx + rx`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdcTensor {
    pub chirps: usize,
    pub antennas: usize,
    pub samples: usize,
    pub data: Vec<Complex64>,
}

impl AdcTensor {
    #[inline]
    pub fn index(&self, chirp: usize, antenna: usize, sample: usize) -> usize {
        (chirp * self.antennas + antenna) * self.samples + sample
    }

    pub fn get(&self, chirp: usize, antenna: usize, sample: usize) -> Complex64 {
        self.data[self.index(chirp, antenna, sample)]
    }
}

pub fn reshape_adc(raw: &[i16], cfg: &RadarFrameConfig, layout: AdcLayout) -> Result<AdcTensor> {
    cfg.validate()?;
    let expected = 2 * cfg.samples_per_chirp * cfg.chirps_per_frame * cfg.num_tx * cfg.num_rx;
    if raw.len() != expected {
        return Err(Error::format(
            2 * raw.len().min(expected),
            format!("expected {expected} int16 values, got {}", raw.len()),
        ));
    }
    let antennas = cfg.virtual_antennas();
    let mut t = AdcTensor {
        chirps: cfg.chirps_per_frame,
        antennas,
        samples: cfg.samples_per_chirp,
        data: vec![Complex64::new(0.0, 0.0); raw.len() / 2],
    };
    for c in 0..cfg.chirps_per_frame {
        for tx in 0..cfg.num_tx {
            for rx in 0..cfg.num_rx {
                for s in 0..cfg.samples_per_chirp {
                    let p = layout.pair_index(cfg, c, tx, rx, s);
                    let idx = t.index(c, tx * cfg.num_rx + rx, s);
                    t.data[idx] = Complex64::new(raw[2 * p] as f64, raw[2 * p + 1] as f64);
                }
            }
        }
    }
    Ok(t)
}

/// Inverse of [`reshape_adc`] for tensors with integral components.
pub fn interleave_adc(t: &AdcTensor, cfg: &RadarFrameConfig, layout: AdcLayout) -> Result<Vec<i16>> {
    if t.chirps != cfg.chirps_per_frame || t.antennas != cfg.virtual_antennas() || t.samples != cfg.samples_per_chirp {
        return Err(Error::param("tensor dimensions do not match the frame configuration"));
    }
    let to_i16 = |v: f64| v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
    let mut raw = vec![0i16; 2 * t.data.len()];
    for c in 0..cfg.chirps_per_frame {
        for tx in 0..cfg.num_tx {
            for rx in 0..cfg.num_rx {
                for s in 0..cfg.samples_per_chirp {
                    let p = layout.pair_index(cfg, c, tx, rx, s);
                    let v = t.get(c, tx * cfg.num_rx + rx, s);
                    raw[2 * p] = to_i16(v.re);
                    raw[2 * p + 1] = to_i16(v.im);
                }
            }
        }
    }
    Ok(raw)
}

/// Header fields of a raw frame file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawHeader {
    pub layout: AdcLayout,
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub num_tx: usize,
    pub num_rx: usize,
}

impl RawHeader {
    pub fn payload_len(&self) -> usize {
        2 * self.samples_per_chirp * self.chirps_per_frame * self.num_tx * self.num_rx
    }
}

pub fn write_raw_frame<W: Write>(mut w: W, header: &RawHeader, raw: &[i16]) -> Result<()> {
    if raw.len() != header.payload_len() {
        return Err(Error::param(format!(
            "payload has {} values, header implies {}",
            raw.len(),
            header.payload_len()
        )));
    }
    let mut buf = Vec::with_capacity(24 + 2 * raw.len());
    buf.extend_from_slice(RAW_MAGIC);
    buf.extend_from_slice(&RAW_VERSION.to_le_bytes());
    buf.extend_from_slice(&header.layout.code().to_le_bytes());
    for v in [header.samples_per_chirp, header.chirps_per_frame, header.num_tx, header.num_rx] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in raw {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raw_frame<R: Read>(mut r: R) -> Result<(RawHeader, Vec<i16>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 24 {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != RAW_MAGIC {
        return Err(Error::format(0, "bad magic, expected R3DA"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RAW_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: RAW_VERSION,
        });
    }
    let code = u16::from_le_bytes([bytes[6], bytes[7]]);
    let layout = AdcLayout::from_code(code).ok_or_else(|| Error::format(6, format!("unknown layout {code}")))?;
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let header = RawHeader {
        layout,
        samples_per_chirp: dim(8),
        chirps_per_frame: dim(12),
        num_tx: dim(16),
        num_rx: dim(20),
    };
    let n = header.payload_len();
    let body = &bytes[24..];
    if body.len() != 2 * n {
        return Err(Error::format(
            24 + body.len().min(2 * n),
            format!("payload has {} bytes, header implies {}", body.len(), 2 * n),
        ));
    }
    let raw = body
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    Ok((header, raw))
}

/// Point scatterer for [`simulate_adc`], expressed in FFT-bin units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimTarget {
    /// Beat frequency in range-FFT bins of the uncropped spectrum.
    pub range_bin: f64,
    /// Doppler frequency in doppler-FFT bins (signed).
    pub doppler_bin: f64,
    /// Azimuth in radians; 0 is boresight.
    pub azimuth: f64,
    /// Peak amplitude in ADC counts.
    pub amplitude: f64,
}

/// Synthesizes a TDM-MIMO frame: chirp `c` of transmitter `m` sees the
/// doppler phase of slow time `c + m / num_tx`, and virtual antenna `v`
/// sees the half-wavelength array phase `pi * v * sin(azimuth)`.
pub fn simulate_adc<R: Rng + ?Sized>(
    targets: &[SimTarget],
    cfg: &RadarFrameConfig,
    layout: AdcLayout,
    noise_std: f64,
    rng: &mut R,
) -> Result<Vec<i16>> {
    cfg.validate()?;
    let (ns, nc) = (cfg.samples_per_chirp as f64, cfg.chirps_per_frame as f64);
    let mut t = AdcTensor {
        chirps: cfg.chirps_per_frame,
        antennas: cfg.virtual_antennas(),
        samples: cfg.samples_per_chirp,
        data: vec![Complex64::new(0.0, 0.0); cfg.chirps_per_frame * cfg.virtual_antennas() * cfg.samples_per_chirp],
    };
    for c in 0..cfg.chirps_per_frame {
        for tx in 0..cfg.num_tx {
            for rx in 0..cfg.num_rx {
                let v = tx * cfg.num_rx + rx;
                for s in 0..cfg.samples_per_chirp {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for tg in targets {
                        let slow = c as f64 + tx as f64 / cfg.num_tx as f64;
                        let phase = 2.0 * PI * tg.range_bin * s as f64 / ns
                            + 2.0 * PI * tg.doppler_bin * slow / nc
                            + PI * v as f64 * tg.azimuth.sin();
                        acc += Complex64::from_polar(tg.amplitude, phase);
                    }
                    if noise_std > 0.0 {
                        acc += Complex64::new(
                            noise_std * rng.sample::<f64, _>(StandardNormal),
                            noise_std * rng.sample::<f64, _>(StandardNormal),
                        );
                    }
                    let idx = t.index(c, v, s);
                    t.data[idx] = acc;
                }
            }
        }
    }
    interleave_adc(&t, cfg, layout)
}
