//! `R3DW` checkpoint files.
//!
//! Layout (little-endian): magic `R3DW`, version `u16`, target `u8`
//! (0 residual, 1 direct), `emb_dim u32`, `max_groups u32`, `n_widths u32`,
//! `widths[n] u32`, `n_params u32`, then `n_params` `f32` values in flat-view
//! order.

use std::io::{Read, Write};

use super::params::{Architecture, DenoiserParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"R3DW";
pub const CHECKPOINT_VERSION: u16 = 1;

/// What the network was trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictionTarget {
    /// `y - x`; samples are fused as `x + z0`.
    Residual,
    /// `y` itself; samples are used as-is.
    Direct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub target: PredictionTarget,
    pub params: DenoiserParams,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let arch = ckpt.params.architecture();
    let mut buf = Vec::with_capacity(32 + 4 * ckpt.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(match ckpt.target {
        PredictionTarget::Residual => 0,
        PredictionTarget::Direct => 1,
    });
    buf.extend_from_slice(&(arch.emb_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.max_groups as u32).to_le_bytes());
    buf.extend_from_slice(&(arch.widths.len() as u32).to_le_bytes());
    for &wd in &arch.widths {
        buf.extend_from_slice(&(wd as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for &v in ckpt.params.values() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected R3DW"));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let target = match c.take(1, "target")?[0] {
        0 => PredictionTarget::Residual,
        1 => PredictionTarget::Direct,
        other => return Err(Error::format(c.pos - 1, format!("unknown target {other}"))),
    };
    let emb_dim = c.u32("emb_dim")? as usize;
    let max_groups = c.u32("max_groups")? as usize;
    let n_widths = c.u32("width count")? as usize;
    if n_widths > 16 {
        return Err(Error::format(c.pos - 4, format!("implausible width count {n_widths}")));
    }
    let widths = (0..n_widths)
        .map(|_| c.u32("width").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        widths,
        emb_dim,
        max_groups,
    };
    arch.validate().map_err(|e| Error::Incompatible(e.to_string()))?;
    let n = c.u32("parameter count")? as usize;
    let expected = DenoiserParams::zeros(arch.clone())?.len();
    if n != expected {
        return Err(Error::Incompatible(format!(
            "header declares {n} parameters but the architecture has {expected}"
        )));
    }
    let payload = c.take(4 * n, "parameters")?;
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos, "trailing bytes after parameters"));
    }
    Ok(Checkpoint {
        target,
        params: DenoiserParams::from_values(arch, values)?,
    })
}

impl Checkpoint {
    /// Rounds parameters to `f32`, matching what a save/load cycle yields.
    pub fn quantized(mut self) -> Self {
        for v in self.params.values_mut() {
            *v = *v as f32 as f64;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::InitOptions;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let params = DenoiserParams::init(
            Architecture::tiny(),
            &mut ChaCha8Rng::seed_from_u64(1),
            InitOptions {
                zero_output_head: false,
            },
        )
        .unwrap();
        Checkpoint {
            target: PredictionTarget::Direct,
            params,
        }
    }

    #[test]
    fn round_trip_matches_quantized() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, ckpt.quantized());
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Format { offset: 0, .. })));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::UnsupportedVersion { found: 9, .. })));

        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Format { .. })));

        // widen the first layer: parameter count no longer matches
        let mut bad = buf.clone();
        bad[19..23].copy_from_slice(&6u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&bad[..]), Err(Error::Incompatible(_))));
    }
}
