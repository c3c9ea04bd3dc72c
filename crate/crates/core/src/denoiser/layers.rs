//! Forward and backward kernels for the denoiser: 3x3 convolution, group
//! normalization with per-channel modulation, SiLU, 2x2 average pooling and
//! nearest-neighbour upsampling. All tensors are channel-major `(C, H, W)`.

use std::ops::{Add, AddAssign};

/// Stabilizer added to the group variance before the square root.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "feature map size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    fn same_dims(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

impl Add<&FeatureMap> for &FeatureMap {
    type Output = FeatureMap;

    fn add(self, rhs: &FeatureMap) -> FeatureMap {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl AddAssign<&FeatureMap> for FeatureMap {
    fn add_assign(&mut self, rhs: &FeatureMap) {
        assert!(self.same_dims(rhs), "feature map dims differ");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

/// Accumulates `w * src` shifted by `(dy, dx)` into `dst`, zero outside.
/// `dst[i][j] += w * src[i + dy][j + dx]`.
#[inline]
fn shifted_axpy(dst: &mut [f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize, wt: f64) {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize - dy).min(h as isize) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize - dx).min(w as isize) as usize;
    if j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let si = (i as isize + dy) as usize;
        let d = &mut dst[i * w + j0..i * w + j1];
        let s = &src[si * w + (j0 as isize + dx) as usize..si * w + (j1 as isize + dx) as usize];
        for (a, b) in d.iter_mut().zip(s) {
            *a += wt * b;
        }
    }
}

/// Correlation sum `sum_ij a[i][j] * b[i + dy][j + dx]` over valid indices.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let i0 = (-dy).max(0) as usize;
    let i1 = (h as isize - dy).min(h as isize) as usize;
    let j0 = (-dx).max(0) as usize;
    let j1 = (w as isize - dx).min(w as isize) as usize;
    if j0 >= j1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in i0..i1 {
        let bi = (i as isize + dy) as usize;
        let ar = &a[i * w + j0..i * w + j1];
        let br = &b[bi * w + (j0 as isize + dx) as usize..bi * w + (j1 as isize + dx) as usize];
        acc += ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
    }
    acc
}

/// 3x3 same-padding convolution. `weight` is `(cout, cin, 3, 3)`.
pub fn conv3x3_forward(input: &FeatureMap, weight: &[f64], bias: &[f64], cout: usize) -> FeatureMap {
    let (cin, h, w) = (input.channels, input.height, input.width);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    debug_assert_eq!(bias.len(), cout);
    let mut out = FeatureMap::zeros(cout, h, w);
    for o in 0..cout {
        let plane = out.plane_mut(o);
        plane.fill(bias[o]);
        for c in 0..cin {
            let src = input.plane(c);
            let k = &weight[(o * cin + c) * 9..(o * cin + c + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    shifted_axpy(plane, src, h, w, ky as isize - 1, kx as isize - 1, k[ky * 3 + kx]);
                }
            }
        }
    }
    out
}

/// Gradients of a 3x3 convolution. Accumulates into `d_weight`/`d_bias` and
/// returns the input gradient when requested.
pub fn conv3x3_backward(
    input: &FeatureMap,
    weight: &[f64],
    d_out: &FeatureMap,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    want_input_grad: bool,
) -> Option<FeatureMap> {
    let (cin, h, w) = (input.channels, input.height, input.width);
    let cout = d_out.channels;
    let mut d_in = want_input_grad.then(|| FeatureMap::zeros(cin, h, w));
    for o in 0..cout {
        let g = d_out.plane(o);
        d_bias[o] += g.iter().sum::<f64>();
        for c in 0..cin {
            let src = input.plane(c);
            let base = (o * cin + c) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let (dy, dx) = (ky as isize - 1, kx as isize - 1);
                    d_weight[base + ky * 3 + kx] += shifted_dot(g, src, h, w, dy, dx);
                    if let Some(d_in) = d_in.as_mut() {
                        // d_in[i + dy][j + dx] += k * g[i][j]
                        shifted_axpy(d_in.plane_mut(c), g, h, w, -dy, -dx, weight[base + ky * 3 + kx]);
                    }
                }
            }
        }
    }
    d_in
}

/// Statistics kept from a normalization forward pass.
#[derive(Clone, Debug)]
pub struct NormCache {
    pub normalized: FeatureMap,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
    pub groups: usize,
}

/// Group normalization followed by per-channel scale and shift:
/// `gamma[c] * (h - mean_g) / sqrt(var_g + eps) + beta[c]`.
pub fn group_norm_modulate(
    h: &FeatureMap,
    gamma: &[f64],
    beta: &[f64],
    groups: usize,
) -> (FeatureMap, NormCache) {
    let c = h.channels;
    assert!(groups >= 1 && c % groups == 0, "{c} channels not divisible into {groups} groups");
    let per = c / groups;
    let plane = h.plane_len();
    let n = (per * plane) as f64;
    let mut normalized = FeatureMap::zeros(c, h.height, h.width);
    let mut out = FeatureMap::zeros(c, h.height, h.width);
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let vals = &h.data[span.clone()];
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(inv);
        for (dst, v) in normalized.data[span].iter_mut().zip(vals) {
            *dst = (v - mean) * inv;
        }
    }
    for ch in 0..c {
        let (gm, bt) = (gamma[ch], beta[ch]);
        for (o, x) in out.plane_mut(ch).iter_mut().zip(normalized.plane(ch)) {
            *o = gm * x + bt;
        }
    }
    let cache = NormCache {
        normalized,
        inv_std,
        gamma: gamma.to_vec(),
        groups,
    };
    (out, cache)
}

/// Backward of [`group_norm_modulate`]; accumulates `d_gamma`, `d_beta` and
/// returns the input gradient.
pub fn group_norm_modulate_backward(
    cache: &NormCache,
    d_out: &FeatureMap,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> FeatureMap {
    let xh = &cache.normalized;
    let c = xh.channels;
    let per = c / cache.groups;
    let plane = xh.plane_len();
    let n = (per * plane) as f64;
    let mut d_xhat = FeatureMap::zeros(c, xh.height, xh.width);
    for ch in 0..c {
        let g = d_out.plane(ch);
        let x = xh.plane(ch);
        d_gamma[ch] += g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        d_beta[ch] += g.iter().sum::<f64>();
        let gm = cache.gamma[ch];
        for (d, gv) in d_xhat.plane_mut(ch).iter_mut().zip(g) {
            *d = gm * gv;
        }
    }
    let mut d_in = FeatureMap::zeros(c, xh.height, xh.width);
    for g in 0..cache.groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let dx = &d_xhat.data[span.clone()];
        let x = &xh.data[span.clone()];
        let sum_dx = dx.iter().sum::<f64>();
        let sum_dx_x = dx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let inv = cache.inv_std[g];
        for ((d, dv), xv) in d_in.data[span].iter_mut().zip(dx).zip(x) {
            *d = inv / n * (n * dv - sum_dx - xv * sum_dx_x);
        }
    }
    d_in
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * logistic(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = logistic(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn silu_map(h: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: h.data.iter().map(|&v| silu(v)).collect(),
        ..*h
    }
}

/// `d_out * silu'(pre)`.
pub fn silu_backward(pre: &FeatureMap, d_out: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: pre
            .data
            .iter()
            .zip(&d_out.data)
            .map(|(&x, &g)| g * silu_grad(x))
            .collect(),
        ..*pre
    }
}

pub fn avg_pool2(h: &FeatureMap) -> FeatureMap {
    let (oh, ow) = (h.height / 2, h.width / 2);
    let mut out = FeatureMap::zeros(h.channels, oh, ow);
    for c in 0..h.channels {
        let src = h.plane(c);
        let dst = out.plane_mut(c);
        for i in 0..oh {
            for j in 0..ow {
                let a = src[2 * i * h.width + 2 * j];
                let b = src[2 * i * h.width + 2 * j + 1];
                let cc = src[(2 * i + 1) * h.width + 2 * j];
                let d = src[(2 * i + 1) * h.width + 2 * j + 1];
                dst[i * ow + j] = 0.25 * (a + b + cc + d);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(d_out: &FeatureMap) -> FeatureMap {
    let (h, w) = (d_out.height * 2, d_out.width * 2);
    let mut d_in = FeatureMap::zeros(d_out.channels, h, w);
    for c in 0..d_out.channels {
        let g = d_out.plane(c);
        let dst = d_in.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = 0.25 * g[(i / 2) * d_out.width + j / 2];
            }
        }
    }
    d_in
}

pub fn upsample2(h: &FeatureMap) -> FeatureMap {
    let (oh, ow) = (h.height * 2, h.width * 2);
    let mut out = FeatureMap::zeros(h.channels, oh, ow);
    for c in 0..h.channels {
        let src = h.plane(c);
        let dst = out.plane_mut(c);
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * h.width + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(d_out: &FeatureMap) -> FeatureMap {
    let (h, w) = (d_out.height / 2, d_out.width / 2);
    let mut d_in = FeatureMap::zeros(d_out.channels, h, w);
    for c in 0..d_out.channels {
        let g = d_out.plane(c);
        let dst = d_in.plane_mut(c);
        for i in 0..d_out.height {
            for j in 0..d_out.width {
                dst[(i / 2) * w + j / 2] += g[i * d_out.width + j];
            }
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> FeatureMap {
        let data = (0..c * h * w)
            .map(|k| ((k * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        FeatureMap::from_data(c, h, w, data)
    }

    /// Direct 7-loop convolution.
    fn conv_naive(x: &FeatureMap, wt: &[f64], b: &[f64], cout: usize) -> FeatureMap {
        let (cin, h, w) = (x.channels, x.height, x.width);
        let mut out = FeatureMap::zeros(cout, h, w);
        for o in 0..cout {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (si, sj) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                                    acc += wt[((o * cin + c) * 3 + ky) * 3 + kx]
                                        * x.data[(c * h + si as usize) * w + sj as usize];
                                }
                            }
                        }
                    }
                    out.data[(o * h + i) * w + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive() {
        let x = ramp(3, 5, 7);
        let wt: Vec<f64> = (0..2 * 3 * 9).map(|k| (k as f64 * 0.37).sin()).collect();
        let b = vec![0.1, -0.2];
        let fast = conv3x3_forward(&x, &wt, &b, 2);
        let slow = conv_naive(&x, &wt, &b, 2);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_input_grad_is_adjoint() {
        // <conv(x), g> - bias term == <x, conv^T(g)>
        let x = ramp(2, 4, 6);
        let wt: Vec<f64> = (0..3 * 2 * 9).map(|k| (k as f64 * 0.11).cos()).collect();
        let b = vec![0.0; 3];
        let g = ramp(3, 4, 6);
        let y = conv3x3_forward(&x, &wt, &b, 3);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; 3];
        let dx = conv3x3_backward(&x, &wt, &g, &mut dw, &mut db, true).unwrap();
        let rhs: f64 = x.data.iter().zip(&dx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // linear in the weights: <dw, wt> equals the same inner product
        let via_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn identity_modulation_normalizes_groups() {
        let h = FeatureMap::from_data(
            4,
            3,
            3,
            (0..36).map(|k| ((k * 31) % 17) as f64 * 0.8 - 3.0).collect(),
        );
        let (out, _) = group_norm_modulate(&h, &[1.0; 4], &[0.0; 4], 2);
        for g in 0..2 {
            let vals = &out.data[g * 18..(g + 1) * 18];
            let m = vals.iter().sum::<f64>() / 18.0;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 18.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-5, "variance {v}");
        }
    }

    #[test]
    fn zero_scale_gives_shift() {
        let h = ramp(2, 4, 4);
        let (out, _) = group_norm_modulate(&h, &[0.0, 0.0], &[0.3, -0.7], 1);
        assert!(out.plane(0).iter().all(|&v| v == 0.3));
        assert!(out.plane(1).iter().all(|&v| v == -0.7));
    }

    #[test]
    fn constant_input_gives_shift() {
        let h = FeatureMap::from_data(2, 3, 3, vec![4.2; 18]);
        let (out, _) = group_norm_modulate(&h, &[1.5, 2.0], &[0.25, 0.5], 2);
        assert!(out.plane(0).iter().all(|&v| (v - 0.25).abs() < 1e-9));
        assert!(out.plane(1).iter().all(|&v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn pool_and_upsample_are_adjoint_up_to_scale() {
        let x = ramp(2, 4, 6);
        let y = ramp(2, 2, 3);
        let px = avg_pool2(&x);
        let lhs: f64 = px.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let uy = upsample2(&y);
        let rhs: f64 = x.data.iter().zip(&uy.data).map(|(a, b)| a * b).sum();
        assert!((lhs - 0.25 * rhs).abs() < 1e-12);
        assert_eq!(avg_pool2_backward(&y).data, uy.data.iter().map(|v| v * 0.25).collect::<Vec<_>>());
        let back = upsample2_backward(&x);
        assert_eq!(back.data.len(), y.data.len());
    }

    #[test]
    fn silu_grad_matches_difference() {
        for &x in &[-4.0, -0.5, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
