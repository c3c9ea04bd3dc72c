//! Point extraction from BEV grids, nearest-neighbour point-set metrics
//! (Chamfer, Hausdorff, F-score) and residual distribution statistics.

use std::fmt;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Grid2D;

pub const DEFAULT_POINT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_FSCORE_TAU: f64 = 2.0;
/// Activity threshold for residual statistics, in 8-bit display units.
pub const DEFAULT_ACTIVITY_THRESHOLD: f64 = 1.0;

/// 2D points `(row, col)` in pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet2D {
    points: Vec<[f64; 2]>,
}

impl PointSet2D {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySet("point set"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("point coordinates must be finite"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, by: [f64; 2]) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + by[0], p[1] + by[1]]).collect(),
        }
    }
}

/// One point per pixel whose intensity exceeds `threshold`.
pub fn extract_points(image: &Grid2D, threshold: f64) -> Result<PointSet2D> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let mut points = Vec::new();
    for i in 0..image.height() {
        for j in 0..image.width() {
            if image[(i, j)] > threshold {
                points.push([i as f64, j as f64]);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptySet("no pixel above the extraction threshold"));
    }
    Ok(PointSet2D { points })
}

#[inline]
pub(crate) fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dr = a[0] - b[0];
    let dc = a[1] - b[1];
    (dr * dr + dc * dc).sqrt()
}

/// Uniform bucket grid over a point set for exact nearest-neighbour queries.
pub struct BucketGrid<'a> {
    points: &'a [[f64; 2]],
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    /// Start offsets into `order` per cell (CSR layout).
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> BucketGrid<'a> {
    pub fn new(points: &'a [[f64; 2]]) -> Self {
        assert!(!points.is_empty(), "bucket grid over an empty set");
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        let per_side = (points.len() as f64).sqrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_side } else { 1.0 };
        let dims = [
            (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1),
            (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1),
        ];
        let cell_of = |p: &[f64; 2]| -> usize {
            let r = (((p[0] - lo[0]) / cell).floor() as usize).min(dims[0] - 1);
            let c = (((p[1] - lo[1]) / cell).floor() as usize).min(dims[1] - 1);
            r * dims[1] + c
        };
        let mut counts = vec![0usize; dims[0] * dims[1] + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0; points.len()];
        for (idx, p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c]] = idx;
            fill[c] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            starts,
            order,
        }
    }

    /// Exact distance from `q` to its nearest indexed point.
    pub fn nearest_distance(&self, q: [f64; 2]) -> f64 {
        let ci = ((q[0] - self.origin[0]) / self.cell).floor();
        let cj = ((q[1] - self.origin[1]) / self.cell).floor();
        // Clamp far-away queries so ring indices stay small.
        let ci = ci.clamp(-1.0, self.dims[0] as f64) as i64;
        let cj = cj.clamp(-1.0, self.dims[1] as f64) as i64;
        let (nr, nc) = (self.dims[0] as i64, self.dims[1] as i64);
        let mut best = f64::INFINITY;
        let mut k: i64 = 0;
        loop {
            for r in (ci - k)..=(ci + k) {
                if r < 0 || r >= nr {
                    continue;
                }
                let on_edge_row = r == ci - k || r == ci + k;
                let step = if on_edge_row { 1 } else { (2 * k).max(1) };
                let mut c = cj - k;
                while c <= cj + k {
                    if c >= 0 && c < nc {
                        let cell = (r * nc + c) as usize;
                        for &idx in &self.order[self.starts[cell]..self.starts[cell + 1]] {
                            let d = distance(q, self.points[idx]);
                            if d < best {
                                best = d;
                            }
                        }
                    }
                    c += step;
                }
            }
            // Every point outside the searched block lies beyond its boundary.
            let r0 = self.origin[0] + (ci - k) as f64 * self.cell;
            let r1 = self.origin[0] + (ci + k + 1) as f64 * self.cell;
            let c0 = self.origin[1] + (cj - k) as f64 * self.cell;
            let c1 = self.origin[1] + (cj + k + 1) as f64 * self.cell;
            let margin = (q[0] - r0).min(r1 - q[0]).min(q[1] - c0).min(c1 - q[1]);
            let covers = ci - k <= 0 && cj - k <= 0 && ci + k >= nr - 1 && cj + k >= nc - 1;
            if covers || best <= margin {
                return best;
            }
            k += 1;
        }
    }
}

/// Distance from every point of `from` to its nearest neighbour in `to`.
pub fn nearest_distances(from: &PointSet2D, to: &PointSet2D) -> Vec<f64> {
    let index = BucketGrid::new(to.points());
    from.points().iter().map(|&p| index.nearest_distance(p)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

fn fraction_within(v: &[f64], tau: f64) -> f64 {
    v.iter().filter(|&&d| d <= tau).count() as f64 / v.len() as f64
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Half the sum of the two directed mean nearest-neighbour distances.
pub fn chamfer(p: &PointSet2D, q: &PointSet2D) -> f64 {
    0.5 * (mean(&nearest_distances(p, q)) + mean(&nearest_distances(q, p)))
}

pub fn hausdorff(p: &PointSet2D, q: &PointSet2D) -> f64 {
    max(&nearest_distances(p, q)).max(max(&nearest_distances(q, p)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub cd: f64,
    pub hd: f64,
    pub fscore: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold_used: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "cd,hd,precision,recall,fscore";

    /// Per-field mean over several reports.
    pub fn mean(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricsReport {
            cd: avg(|r| r.cd),
            hd: avg(|r| r.hd),
            fscore: avg(|r| r.fscore),
            precision: avg(|r| r.precision),
            recall: avg(|r| r.recall),
            threshold_used: reports[0].threshold_used,
        })
    }
}

/// Precision, recall and F-score of `predicted` against `truth` with
/// inclusive distance threshold `tau`.
pub fn fscore(predicted: &PointSet2D, truth: &PointSet2D, tau: f64) -> Result<(f64, f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let precision = fraction_within(&nearest_distances(predicted, truth), tau);
    let recall = fraction_within(&nearest_distances(truth, predicted), tau);
    Ok((precision, recall, harmonic(precision, recall)))
}

/// All three metrics from one pair of nearest-neighbour sweeps.
pub fn evaluate(predicted: &PointSet2D, truth: &PointSet2D, tau: f64) -> Result<MetricsReport> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let fwd = nearest_distances(predicted, truth);
    let bwd = nearest_distances(truth, predicted);
    let precision = fraction_within(&fwd, tau);
    let recall = fraction_within(&bwd, tau);
    Ok(MetricsReport {
        cd: 0.5 * (mean(&fwd) + mean(&bwd)),
        hd: max(&fwd).max(max(&bwd)),
        fscore: harmonic(precision, recall),
        precision,
        recall,
        threshold_used: tau,
    })
}

/// Extracts points from both images and evaluates them.
pub fn evaluate_grids(predicted: &Grid2D, truth: &Grid2D, point_threshold: f64, tau: f64) -> Result<MetricsReport> {
    predicted.ensure_same_shape(truth)?;
    let p = extract_points(predicted, point_threshold)?;
    let q = extract_points(truth, point_threshold)?;
    evaluate(&p, &q, tau)
}

/// Quadratic-time reference implementations.
pub mod reference {
    use super::{distance, harmonic, PointSet2D};

    pub fn nearest_distances(from: &PointSet2D, to: &PointSet2D) -> Vec<f64> {
        from.points()
            .iter()
            .map(|&a| {
                let mut best = f64::INFINITY;
                for &b in to.points() {
                    let d = distance(a, b);
                    if d < best {
                        best = d;
                    }
                }
                best
            })
            .collect()
    }

    pub fn chamfer(p: &PointSet2D, q: &PointSet2D) -> f64 {
        let a = nearest_distances(p, q);
        let b = nearest_distances(q, p);
        0.5 * (a.iter().sum::<f64>() / a.len() as f64 + b.iter().sum::<f64>() / b.len() as f64)
    }

    pub fn hausdorff(p: &PointSet2D, q: &PointSet2D) -> f64 {
        let a = nearest_distances(p, q);
        let b = nearest_distances(q, p);
        a.iter().chain(&b).copied().fold(0.0, f64::max)
    }

    pub fn fscore(p: &PointSet2D, q: &PointSet2D, tau: f64) -> (f64, f64, f64) {
        let a = nearest_distances(p, q);
        let b = nearest_distances(q, p);
        let prec = a.iter().filter(|&&d| d <= tau).count() as f64 / a.len() as f64;
        let rec = b.iter().filter(|&&d| d <= tau).count() as f64 / b.len() as f64;
        (prec, rec, harmonic(prec, rec))
    }
}

/// Distribution summary of a residual in 8-bit display units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualStats {
    /// Fraction of pixels with `|value| >= activity_threshold`.
    pub active_fraction: f64,
    /// `max - min` over active values.
    pub value_range: f64,
    /// Population standard deviation over active values.
    pub stddev: f64,
    /// Fraction of active values with `|value| <= 10`.
    pub frac_within_10: f64,
    pub active_count: usize,
    pub total_count: usize,
    /// Set when no pixel is active; the statistics are then zero.
    pub degenerate: bool,
}

impl fmt::Display for ResidualStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Active: {:.1}%, Range: {:.0}, Std: {:.1}, within +-10: {:.1}%",
            100.0 * self.active_fraction,
            self.value_range,
            self.stddev,
            100.0 * self.frac_within_10
        )
    }
}

impl ResidualStats {
    pub const CSV_HEADER: &'static str =
        "active_fraction,value_range,stddev,frac_within_10,active_count,total_count,degenerate";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.active_fraction,
            self.value_range,
            self.stddev,
            self.frac_within_10,
            self.active_count,
            self.total_count,
            self.degenerate as u8
        )
    }
}

/// Streaming accumulator for [`ResidualStats`] over many grids.
#[derive(Clone, Debug)]
pub struct ResidualStatsAccumulator {
    threshold: f64,
    total: usize,
    active: usize,
    sum: f64,
    sum_sq: f64,
    lo: f64,
    hi: f64,
    within: usize,
}

impl ResidualStatsAccumulator {
    pub fn new(activity_threshold: f64) -> Self {
        Self {
            threshold: activity_threshold,
            total: 0,
            active: 0,
            sum: 0.0,
            sum_sq: 0.0,
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
            within: 0,
        }
    }

    /// Adds a grid in `[0, 1]`-normalized units (scaled by 255 here).
    pub fn add(&mut self, r: &Grid2D) {
        for &v in r.values() {
            self.total += 1;
            let d = v * 255.0;
            if d.abs() >= self.threshold {
                self.active += 1;
                self.sum += d;
                self.sum_sq += d * d;
                self.lo = self.lo.min(d);
                self.hi = self.hi.max(d);
                if d.abs() <= 10.0 {
                    self.within += 1;
                }
            }
        }
    }

    pub fn finish(&self) -> ResidualStats {
        if self.active == 0 {
            return ResidualStats {
                active_fraction: 0.0,
                value_range: 0.0,
                stddev: 0.0,
                frac_within_10: 0.0,
                active_count: 0,
                total_count: self.total,
                degenerate: true,
            };
        }
        let n = self.active as f64;
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        ResidualStats {
            active_fraction: n / self.total as f64,
            value_range: self.hi - self.lo,
            stddev: var.sqrt(),
            frac_within_10: self.within as f64 / n,
            active_count: self.active,
            total_count: self.total,
            degenerate: false,
        }
    }
}

pub fn residual_stats(r: &Grid2D, activity_threshold: f64) -> Result<ResidualStats> {
    if !r.is_finite() {
        return Err(Error::param("residual contains non-finite values"));
    }
    let mut acc = ResidualStatsAccumulator::new(activity_threshold);
    acc.add(r);
    Ok(acc.finish())
}
