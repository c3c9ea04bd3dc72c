//! Two-dimensional order-statistic CFAR.

use crate::error::{Error, Result};
use crate::grid::Grid2D;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfarParams {
    /// Guard cells per side.
    pub guard: usize,
    /// Training cells per side beyond the guard band.
    pub train: usize,
    /// 1-based order index into the sorted training cells of a full window.
    pub order: usize,
    /// Threshold multiplier on the order statistic.
    pub alpha: f64,
}

impl CfarParams {
    /// Training cells in a window that is not truncated by the border.
    pub fn window_cells(guard: usize, train: usize) -> usize {
        let outer = 2 * (guard + train) + 1;
        let inner = 2 * guard + 1;
        outer * outer - inner * inner
    }

    /// Defaults: `order = ceil(0.75 * cells)`, `alpha` from `pfa`.
    pub fn for_false_alarm_rate(guard: usize, train: usize, pfa: f64) -> Result<Self> {
        let cells = Self::window_cells(guard, train);
        let order = (0.75 * cells as f64).ceil() as usize;
        let alpha = alpha_for_pfa(cells, order, pfa)?;
        Ok(Self {
            guard,
            train,
            order,
            alpha,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let cells = Self::window_cells(self.guard, self.train);
        if self.train == 0 || self.order == 0 || self.order > cells {
            return Err(Error::param(format!(
                "need train >= 1 and 1 <= order <= {cells}, got train {} order {}",
                self.train, self.order
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha must be positive"));
        }
        Ok(())
    }
}

/// False-alarm probability of OS-CFAR on exponentially distributed (square
/// law) noise: `prod_{i<k} (N - i) / (N - i + alpha)`.
pub fn os_cfar_pfa(cells: usize, order: usize, alpha: f64) -> f64 {
    (0..order)
        .map(|i| {
            let m = (cells - i) as f64;
            (m / (m + alpha)).ln()
        })
        .sum::<f64>()
        .exp()
}

/// Inverts [`os_cfar_pfa`] by bisection.
pub fn alpha_for_pfa(cells: usize, order: usize, pfa: f64) -> Result<f64> {
    if !(pfa > 0.0 && pfa < 1.0) {
        return Err(Error::param(format!("false-alarm rate must lie in (0, 1), got {pfa}")));
    }
    if order == 0 || order > cells {
        return Err(Error::param(format!("order {order} outside 1..={cells}")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while os_cfar_pfa(cells, order, hi) > pfa {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::param("false-alarm rate unreachable"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if os_cfar_pfa(cells, order, mid) > pfa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfarHit {
    pub row: usize,
    pub col: usize,
    /// `10 log10(cell / order statistic)`.
    pub snr_db: f64,
}

/// Order index for a window truncated to `available` training cells.
pub fn truncated_order(order: usize, available: usize, full: usize) -> usize {
    ((order * available).div_ceil(full)).clamp(1, available.max(1))
}

/// Runs OS-CFAR over a power map. Windows are truncated at the borders and
/// the order index is scaled by the fraction of training cells kept.
pub fn os_cfar(map: &Grid2D, params: &CfarParams) -> Result<Vec<CfarHit>> {
    params.validate()?;
    let (h, w) = map.shape();
    let reach = (params.guard + params.train) as isize;
    let g = params.guard as isize;
    let full = CfarParams::window_cells(params.guard, params.train);
    let mut hits = Vec::new();
    let mut cells = Vec::with_capacity(full);
    for i in 0..h as isize {
        for j in 0..w as isize {
            cells.clear();
            for r in (i - reach).max(0)..=(i + reach).min(h as isize - 1) {
                let row_guard = (r - i).abs() <= g;
                for c in (j - reach).max(0)..=(j + reach).min(w as isize - 1) {
                    if row_guard && (c - j).abs() <= g {
                        continue;
                    }
                    cells.push(map[(r as usize, c as usize)]);
                }
            }
            if cells.is_empty() {
                continue;
            }
            let k = truncated_order(params.order, cells.len(), full);
            let (_, stat, _) = cells.select_nth_unstable_by(k - 1, f64::total_cmp);
            let stat = *stat;
            let v = map[(i as usize, j as usize)];
            if v > params.alpha * stat {
                let snr_db = 10.0 * (v / stat.max(f64::MIN_POSITIVE)).log10();
                hits.push(CfarHit {
                    row: i as usize,
                    col: j as usize,
                    snr_db,
                });
            }
        }
    }
    Ok(hits)
}
