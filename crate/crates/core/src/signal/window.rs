use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Window applied along the fast-time (range) axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WindowKind {
    #[default]
    Blackman,
    Rectangular,
}

/// Classic Blackman window (0.42 / 0.5 / 0.08).
pub fn blackman_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::param(format!("window length must be at least 2, got {n}")));
    }
    let m = (n - 1) as f64;
    Ok((0..n)
        .map(|k| {
            let x = k as f64 / m;
            0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos()
        })
        .collect())
}

pub fn window(kind: WindowKind, n: usize) -> Result<Vec<f64>> {
    match kind {
        WindowKind::Blackman => blackman_window(n),
        WindowKind::Rectangular if n >= 1 => Ok(vec![1.0; n]),
        WindowKind::Rectangular => Err(Error::param("window length must be positive")),
    }
}
