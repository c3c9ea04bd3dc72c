//! Forward pass with a recorded tape and the matching reverse pass.
//!
//! Topology, for `L = widths.len() - 1` levels:
//!
//! ```text
//! [z, x] -> conv_in -> (res_l -> skip_l -> pool -> down_l) x L -> res_mid
//!        -> (upsample -> up_l -> + skip_l -> res'_l) x L
//!        -> AdaGN -> SiLU -> out_conv -> r_hat
//! ```
//!
//! Every residual block is `h + conv(SiLU(AdaGN(h, e)))` where the AdaGN
//! scale and shift are linear in the embedding `e = SiLU(W * sin_emb(sigma) + b)`.

use super::embedding::embed_noise_level;
use super::layers::{
    avg_pool2, avg_pool2_backward, conv3x3_backward, conv3x3_forward, group_norm_modulate,
    group_norm_modulate_backward, silu, silu_backward, silu_grad, silu_map, upsample2,
    upsample2_backward, FeatureMap, NormCache,
};
use super::params::{ConvSlot, DenoiserParams, ModSlot, ResSlot};
use crate::error::{Error, Result};
use crate::grid::Grid2D;

struct ModCache {
    norm: NormCache,
    pre_act: FeatureMap,
}

struct ResCache {
    modulated: ModCache,
    act: FeatureMap,
}

/// Intermediates of one forward pass, consumed by [`backward`].
pub struct Tape {
    height: usize,
    width: usize,
    sin_emb: Vec<f64>,
    emb_pre: Vec<f64>,
    emb: Vec<f64>,
    input: FeatureMap,
    enc: Vec<ResCache>,
    pooled: Vec<FeatureMap>,
    mid: ResCache,
    upsampled: Vec<FeatureMap>,
    dec: Vec<ResCache>,
    out_mod: ModCache,
    out_act: FeatureMap,
}

fn conv(p: &[f64], slot: &ConvSlot, x: &FeatureMap) -> FeatureMap {
    conv3x3_forward(
        x,
        &p[slot.weight..slot.weight + slot.weight_len()],
        &p[slot.bias..slot.bias + slot.cout],
        slot.cout,
    )
}

fn conv_back(p: &[f64], g: &mut [f64], slot: &ConvSlot, x: &FeatureMap, d: &FeatureMap, want_input: bool) -> Option<FeatureMap> {
    let (wr, br) = (slot.weight..slot.weight + slot.weight_len(), slot.bias..slot.bias + slot.cout);
    // Weight and bias ranges are disjoint and bias follows weight.
    let (gw, gb) = g[wr.start..br.end].split_at_mut(wr.len());
    conv3x3_backward(x, &p[wr], d, gw, gb, want_input)
}

/// `(gamma, beta)` for a modulation slot.
fn modulation(p: &[f64], slot: &ModSlot, emb: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = emb.len();
    let c = slot.channels;
    let row = |k: usize| -> f64 {
        let w = &p[slot.weight + k * d..slot.weight + (k + 1) * d];
        p[slot.bias + k] + w.iter().zip(emb).map(|(a, b)| a * b).sum::<f64>()
    };
    ((0..c).map(row).collect(), (c..2 * c).map(row).collect())
}

fn adagn_forward(p: &[f64], slot: &ModSlot, h: &FeatureMap, emb: &[f64]) -> ModCache {
    let (gamma, beta) = modulation(p, slot, emb);
    let (pre_act, norm) = group_norm_modulate(h, &gamma, &beta, slot.groups);
    ModCache { norm, pre_act }
}

fn adagn_backward(g: &mut [f64], slot: &ModSlot, cache: &ModCache, d_pre: &FeatureMap, emb: &[f64], d_emb: &mut [f64], p: &[f64]) -> FeatureMap {
    let c = slot.channels;
    let mut d_gb = vec![0.0; 2 * c];
    let (d_gamma, d_beta) = d_gb.split_at_mut(c);
    let d_h = group_norm_modulate_backward(&cache.norm, d_pre, d_gamma, d_beta);
    let d = emb.len();
    for (k, &dk) in d_gb.iter().enumerate() {
        g[slot.bias + k] += dk;
        let wrow = slot.weight + k * d;
        for j in 0..d {
            g[wrow + j] += dk * emb[j];
            d_emb[j] += dk * p[wrow + j];
        }
    }
    d_h
}

fn res_forward(p: &[f64], slot: &ResSlot, h: FeatureMap, emb: &[f64]) -> (FeatureMap, ResCache) {
    let modulated = adagn_forward(p, &slot.norm, &h, emb);
    let act = silu_map(&modulated.pre_act);
    let mut out = conv(p, &slot.conv, &act);
    out += &h;
    (out, ResCache { modulated, act })
}

fn res_backward(p: &[f64], g: &mut [f64], slot: &ResSlot, cache: &ResCache, d_out: FeatureMap, emb: &[f64], d_emb: &mut [f64]) -> FeatureMap {
    let d_act = conv_back(p, g, &slot.conv, &cache.act, &d_out, true).expect("input grad requested");
    let d_pre = silu_backward(&cache.modulated.pre_act, &d_act);
    let mut d_h = adagn_backward(g, &slot.norm, &cache.modulated, &d_pre, emb, d_emb, p);
    d_h += &d_out;
    d_h
}

fn check_inputs(params: &DenoiserParams, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<()> {
    z.ensure_same_shape(x)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let f = params.architecture().downsampling_factor();
    let (h, w) = z.shape();
    if h == 0 || w == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::param(format!(
            "input {h}x{w} must be nonempty and divisible by {f}"
        )));
    }
    Ok(())
}

/// Runs the network on `[z, x]` at noise level `sigma`, keeping the tape.
pub fn forward(params: &DenoiserParams, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<(Grid2D, Tape)> {
    check_inputs(params, z, x, sigma)?;
    let p = params.values();
    let layout = &params.layout;
    let d = params.architecture().emb_dim;
    let (h, w) = z.shape();

    let sin_emb = embed_noise_level(sigma, d)?.as_slice().to_vec();
    let emb_pre: Vec<f64> = (0..d)
        .map(|k| {
            let row = &p[layout.emb_weight + k * d..layout.emb_weight + (k + 1) * d];
            p[layout.emb_bias + k] + row.iter().zip(&sin_emb).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    let emb: Vec<f64> = emb_pre.iter().map(|&v| silu(v)).collect();

    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(z.values());
    data.extend_from_slice(x.values());
    let input = FeatureMap::from_data(2, h, w, data);

    let mut hid = conv(p, &layout.conv_in, &input);
    let mut enc = Vec::new();
    let mut skips = Vec::new();
    let mut pooled = Vec::new();
    for l in 0..layout.enc.len() {
        let (out, cache) = res_forward(p, &layout.enc[l], hid, &emb);
        enc.push(cache);
        let pl = avg_pool2(&out);
        skips.push(out);
        hid = conv(p, &layout.down[l], &pl);
        pooled.push(pl);
    }
    let (out, mid) = res_forward(p, &layout.mid, hid, &emb);
    hid = out;

    let depth = layout.dec.len();
    let mut upsampled: Vec<Option<FeatureMap>> = (0..depth).map(|_| None).collect();
    let mut dec: Vec<Option<ResCache>> = (0..depth).map(|_| None).collect();
    for l in (0..depth).rev() {
        let u = upsample2(&hid);
        hid = conv(p, &layout.up[l], &u);
        hid += &skips[l];
        upsampled[l] = Some(u);
        let (out, cache) = res_forward(p, &layout.dec[l], hid, &emb);
        hid = out;
        dec[l] = Some(cache);
    }

    let out_mod = adagn_forward(p, &layout.out_norm, &hid, &emb);
    let out_act = silu_map(&out_mod.pre_act);
    let out = conv(p, &layout.out_conv, &out_act);
    let r_hat = Grid2D::from_vec(h, w, out.data)?;

    let tape = Tape {
        height: h,
        width: w,
        sin_emb,
        emb_pre,
        emb,
        input,
        enc,
        pooled,
        mid,
        upsampled: upsampled.into_iter().map(|u| u.expect("filled")).collect(),
        dec: dec.into_iter().map(|c| c.expect("filled")).collect(),
        out_mod,
        out_act,
    };
    Ok((r_hat, tape))
}

/// Reverse pass: gradient of a scalar loss with respect to every parameter,
/// given `d_loss / d_r_hat`. The result is aligned with the flat view of
/// `params`.
pub fn backward(params: &DenoiserParams, tape: &Tape, d_output: &Grid2D) -> Result<Vec<f64>> {
    if d_output.shape() != (tape.height, tape.width) {
        return Err(Error::Shape {
            expected: (tape.height, tape.width),
            got: d_output.shape(),
        });
    }
    let p = params.values();
    let layout = &params.layout;
    let d = params.architecture().emb_dim;
    let mut g = vec![0.0; p.len()];
    let mut d_emb = vec![0.0; d];

    let d_out = FeatureMap::from_data(1, tape.height, tape.width, d_output.values().to_vec());
    let d_act = conv_back(p, &mut g, &layout.out_conv, &tape.out_act, &d_out, true).expect("input grad");
    let d_pre = silu_backward(&tape.out_mod.pre_act, &d_act);
    let mut d_h = adagn_backward(&mut g, &layout.out_norm, &tape.out_mod, &d_pre, &tape.emb, &mut d_emb, p);

    let depth = layout.dec.len();
    let mut d_skips = Vec::with_capacity(depth);
    for l in 0..depth {
        d_h = res_backward(p, &mut g, &layout.dec[l], &tape.dec[l], d_h, &tape.emb, &mut d_emb);
        d_skips.push(d_h.clone());
        let d_u = conv_back(p, &mut g, &layout.up[l], &tape.upsampled[l], &d_h, true).expect("input grad");
        d_h = upsample2_backward(&d_u);
    }
    d_h = res_backward(p, &mut g, &layout.mid, &tape.mid, d_h, &tape.emb, &mut d_emb);
    for l in (0..depth).rev() {
        let d_p = conv_back(p, &mut g, &layout.down[l], &tape.pooled[l], &d_h, true).expect("input grad");
        d_h = avg_pool2_backward(&d_p);
        d_h += &d_skips[l];
        d_h = res_backward(p, &mut g, &layout.enc[l], &tape.enc[l], d_h, &tape.emb, &mut d_emb);
    }
    conv_back(p, &mut g, &layout.conv_in, &tape.input, &d_h, false);

    for k in 0..d {
        let dk = d_emb[k] * silu_grad(tape.emb_pre[k]);
        g[layout.emb_bias + k] += dk;
        for j in 0..d {
            g[layout.emb_weight + k * d + j] += dk * tape.sin_emb[j];
        }
    }
    Ok(g)
}

/// Network prediction `r_hat = f([z, x], sigma)`.
pub fn denoise(params: &DenoiserParams, z: &Grid2D, x: &Grid2D, sigma: f64) -> Result<Grid2D> {
    forward(params, z, x, sigma).map(|(out, _)| out)
}
