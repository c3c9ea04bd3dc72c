//! Synthetic paired radar/LiDAR scenes and portable pair I/O.
//!
//! Scenes are defined in pixel units. The LiDAR image `y` renders walls and
//! box outlines as thin bright structures; the radar image `x` degrades it
//! with point dropout, intensity jitter, tangential (angular) smearing about
//! a sensor at the bottom center, and clutter on empty pixels. Both images
//! are rounded to `f32` so they survive the `R3DP` format bit-exactly.
//!
//! `R3DP` layout (little-endian): magic `R3DP`, version `u16`, height `u32`,
//! width `u32`, then `x` and `y` as row-major `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::PairedSample;
use crate::error::{Error, Result};
use crate::grid::Grid2D;

pub const PAIR_MAGIC: &[u8; 4] = b"R3DP";
pub const PAIR_VERSION: u16 = 1;
const PAIR_HEADER_LEN: usize = 14;
pub const MIN_SCENE_SIZE: usize = 32;
/// Fraction of intensity carried to each further smeared pixel.
const SMEAR_DECAY: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of wall segments per scene.
    pub walls: (usize, usize),
    /// Inclusive range of box outlines per scene.
    pub boxes: (usize, usize),
    /// Probability that a structure pixel is missing from the radar image.
    pub dropout: f64,
    /// Tangential smearing half-width in pixels.
    pub blur_width: usize,
    /// Probability that an empty pixel carries clutter.
    pub clutter_density: f64,
    /// Standard deviation of additive intensity noise on structure pixels.
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            walls: (2, 4),
            boxes: (1, 3),
            dropout: 0.1,
            blur_width: 2,
            clutter_density: 0.01,
            jitter_std: 0.03,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// A configuration with every degradation switched off.
    pub fn clean(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            dropout: 0.0,
            blur_width: 0,
            clutter_density: 0.0,
            jitter_std: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SCENE_SIZE || self.width < MIN_SCENE_SIZE {
            return Err(Error::param(format!(
                "scene size {}x{} below the {MIN_SCENE_SIZE}-pixel minimum",
                self.height, self.width
            )));
        }
        if self.walls.0 > self.walls.1 || self.boxes.0 > self.boxes.1 {
            return Err(Error::param("structure count ranges must satisfy min <= max"));
        }
        for (name, p) in [("dropout", self.dropout), ("clutter density", self.clutter_density)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::param("jitter stddev must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Also requires both sizes to be multiples of `factor` (the denoiser's
    /// downsampling factor).
    pub fn validate_for(&self, factor: usize) -> Result<()> {
        self.validate()?;
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::param(format!(
                "scene size {}x{} must be divisible by {factor}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// A generated pair plus the mask of pixels that received clutter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDetail {
    pub sample: PairedSample,
    pub clutter: Grid2D,
}

pub fn synth_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<PairedSample> {
    synth_scene_detailed(cfg, rng).map(|d| d.sample)
}

pub fn synth_scene_detailed<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<SceneDetail> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut y = Grid2D::zeros(h, w);

    let walls = rng.random_range(cfg.walls.0..=cfg.walls.1);
    let min_len = h.min(w) as f64 / 4.0;
    for _ in 0..walls {
        let intensity = structure_intensity(rng);
        let (mut a, mut b);
        loop {
            a = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
            b = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
            if (a.0 - b.0).hypot(a.1 - b.1) >= min_len {
                break;
            }
        }
        draw_segment(&mut y, a, b, intensity);
    }
    let boxes = rng.random_range(cfg.boxes.0..=cfg.boxes.1);
    let max_side = (h.min(w) / 4).max(5);
    for _ in 0..boxes {
        let intensity = structure_intensity(rng);
        let bh = rng.random_range(4..=max_side);
        let bw = rng.random_range(4..=max_side);
        let r0 = rng.random_range(0..h - bh) as f64;
        let c0 = rng.random_range(0..w - bw) as f64;
        let (r1, c1) = (r0 + bh as f64, c0 + bw as f64);
        draw_segment(&mut y, (r0, c0), (r0, c1), intensity);
        draw_segment(&mut y, (r1, c0), (r1, c1), intensity);
        draw_segment(&mut y, (r0, c0), (r1, c0), intensity);
        draw_segment(&mut y, (r0, c1), (r1, c1), intensity);
    }
    let y = y.map(to_f32);

    // dropout and jitter on structure pixels
    let mut base = Grid2D::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let v = y[(i, j)];
            if v == 0.0 {
                continue;
            }
            let dropped = cfg.dropout > 0.0 && rng.random::<f64>() < cfg.dropout;
            let jitter = if cfg.jitter_std > 0.0 {
                cfg.jitter_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            if !dropped {
                base[(i, j)] = (v + jitter).clamp(0.0, 1.0);
            }
        }
    }

    // tangential smearing about a sensor at the bottom center
    let mut x = base.clone();
    if cfg.blur_width > 0 {
        let (sr, sc) = (h as f64, (w as f64 - 1.0) / 2.0);
        for i in 0..h {
            for j in 0..w {
                let v = base[(i, j)];
                if v == 0.0 {
                    continue;
                }
                let (dr, dc) = (i as f64 - sr, j as f64 - sc);
                let norm = dr.hypot(dc);
                let (tr, tc) = (-dc / norm, dr / norm);
                for k in 1..=cfg.blur_width {
                    let spread = v * SMEAR_DECAY.powi(k as i32);
                    for s in [-1.0, 1.0] {
                        let r = (i as f64 + s * k as f64 * tr).round();
                        let c = (j as f64 + s * k as f64 * tc).round();
                        if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
                            let cell = &mut x[(r as usize, c as usize)];
                            *cell = cell.max(spread);
                        }
                    }
                }
            }
        }
    }

    // clutter on pixels that are empty in the target
    let mut clutter = Grid2D::zeros(h, w);
    if cfg.clutter_density > 0.0 {
        for i in 0..h {
            for j in 0..w {
                if y[(i, j)] == 0.0 && rng.random::<f64>() < cfg.clutter_density {
                    let c = rng.random_range(0.05..0.35);
                    x[(i, j)] = x[(i, j)].max(c);
                    clutter[(i, j)] = 1.0;
                }
            }
        }
    }

    let x = x.map(|v| to_f32(v.clamp(0.0, 1.0)));
    Ok(SceneDetail {
        sample: PairedSample::new(x, y)?,
        clutter,
    })
}

fn structure_intensity<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.3..=1.0)
}

fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Rasterizes a one-pixel-wide segment, keeping the brighter value where
/// structures overlap.
fn draw_segment(g: &mut Grid2D, a: (f64, f64), b: (f64, f64), intensity: f64) {
    let (h, w) = g.shape();
    let steps = ((a.0 - b.0).abs().max((a.1 - b.1).abs()) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let r = (a.0 + t * (b.0 - a.0)).round();
        let c = (a.1 + t * (b.1 - a.1)).round();
        if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
            let cell = &mut g[(r as usize, c as usize)];
            *cell = cell.max(intensity);
        }
    }
}

/// Scene for one seed.
pub fn scene_for_seed(cfg: &SceneConfig, seed: u64) -> Result<PairedSample> {
    synth_scene(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Scenes for a seed range, generated in parallel; output order follows the
/// seeds and does not depend on the thread count.
pub fn generate(cfg: &SceneConfig, seeds: Range<u64>) -> Result<Vec<PairedSample>> {
    cfg.validate()?;
    seeds.into_par_iter().map(|s| scene_for_seed(cfg, s)).collect()
}

/// Disjoint train/test seed ranges starting at `cfg.seed`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedSplit {
    pub train: Range<u64>,
    pub test: Range<u64>,
}

impl SeedSplit {
    pub fn new(first_seed: u64, train: usize, test: usize) -> Self {
        let mid = first_seed + train as u64;
        Self {
            train: first_seed..mid,
            test: mid..mid + test as u64,
        }
    }
}

/// Writes a pair. Values are stored as `f32`; samples from
/// [`synth_scene`] round-trip exactly.
pub fn write_pair<W: Write>(mut w: W, sample: &PairedSample) -> Result<()> {
    let (h, wd) = sample.shape();
    let mut buf = Vec::with_capacity(PAIR_HEADER_LEN + 8 * h * wd);
    buf.extend_from_slice(PAIR_MAGIC);
    buf.extend_from_slice(&PAIR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(wd as u32).to_le_bytes());
    for g in [sample.radar(), sample.lidar()] {
        for v in g.values() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_pair<R: Read>(mut r: R) -> Result<PairedSample> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len(), "truncated magic"));
    }
    if &bytes[..4] != PAIR_MAGIC {
        return Err(Error::format(0, "bad magic, expected R3DP"));
    }
    if bytes.len() < PAIR_HEADER_LEN {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != PAIR_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: PAIR_VERSION,
        });
    }
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if h == 0 {
        return Err(Error::format(6, "zero height"));
    }
    if w == 0 {
        return Err(Error::format(10, "zero width"));
    }
    let n = h
        .checked_mul(w)
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| Error::format(6, "dimensions overflow"))?;
    let expected = PAIR_HEADER_LEN + 8 * n;
    if bytes.len() < expected {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: {} of {expected} bytes", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected, "trailing bytes after payload"));
    }
    let grid_at = |start: usize| -> Result<Grid2D> {
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            let at = start + 4 * k;
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(at, "non-finite value"));
            }
            values.push(v as f64);
        }
        Grid2D::from_vec(h, w, values)
    };
    let x = grid_at(PAIR_HEADER_LEN)?;
    let y = grid_at(PAIR_HEADER_LEN + 4 * n)?;
    PairedSample::new(x, y)
}

pub fn save_pair(path: impl AsRef<Path>, sample: &PairedSample) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pair(&mut w, sample)?;
    w.flush()?;
    Ok(())
}

pub fn load_pair(path: impl AsRef<Path>) -> Result<PairedSample> {
    read_pair(BufReader::new(File::open(path)?))
}

/// Binary 8-bit PGM (`P5`); values are clamped to `[0, 1]` and scaled by 255.
pub fn write_pgm<W: Write>(mut w: W, g: &Grid2D) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", g.width(), g.height()).into_bytes();
    buf.extend(g.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a binary 8-bit PGM, dividing by the declared maximum value.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Grid2D> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if !bytes.starts_with(b"P5") {
        return Err(Error::format(0, "bad magic, expected P5"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start, "expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(pos, "expected whitespace after header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 {
        return Err(Error::format(3, "zero image dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(pos - 1, format!("unsupported maxval {maxval}")));
    }
    let n = w.checked_mul(h).ok_or_else(|| Error::format(3, "dimensions overflow"))?;
    if bytes.len() < pos + n {
        return Err(Error::format(bytes.len(), "truncated pixel data"));
    }
    let values = bytes[pos..pos + n].iter().map(|b| *b as f64 / maxval as f64).collect();
    Grid2D::from_vec(h, w, values)
}

pub fn save_pgm(path: impl AsRef<Path>, g: &Grid2D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, g)?;
    w.flush()?;
    Ok(())
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Grid2D> {
    read_pgm(BufReader::new(File::open(path)?))
}

/// Exports a pair as two 8-bit images.
pub fn save_pair_pgm(radar: impl AsRef<Path>, lidar: impl AsRef<Path>, sample: &PairedSample) -> Result<()> {
    save_pgm(radar, sample.radar())?;
    save_pgm(lidar, sample.lidar())
}

pub fn load_pair_pgm(radar: impl AsRef<Path>, lidar: impl AsRef<Path>) -> Result<PairedSample> {
    PairedSample::new(load_pgm(radar)?, load_pgm(lidar)?)
}
