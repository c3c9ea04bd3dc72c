//! Analytic denoiser gradients against central finite differences.

use r3d::denoiser::{self, Architecture, DenoiserParams, InitOptions};
use r3d::Grid2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-4;
/// Gradients whose magnitudes are both below this are compared absolutely.
const ABS_FLOOR: f64 = 1e-8;

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(-scale..scale))
}

fn loss(params: &DenoiserParams, z: &Grid2D, x: &Grid2D, r: &Grid2D, sigma: f64) -> f64 {
    let out = denoiser::denoise(params, z, x, sigma).unwrap();
    let n = out.len() as f64;
    let sq: f64 = out.values().iter().zip(r.values()).map(|(a, b)| (a - b).powi(2)).sum();
    sq / n / (sigma * sigma)
}

fn analytic(params: &DenoiserParams, z: &Grid2D, x: &Grid2D, r: &Grid2D, sigma: f64) -> Vec<f64> {
    let (out, tape) = denoiser::forward(params, z, x, sigma).unwrap();
    let n = out.len() as f64;
    let w = 1.0 / (sigma * sigma);
    let d = out.zip_map(r, |a, b| 2.0 * w * (a - b) / n).unwrap();
    denoiser::backward(params, &tape, &d).unwrap()
}

/// Returns the worst relative error over every parameter.
fn worst_relative_error(seed: u64, arch: Architecture, size: usize, sigma: f64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = DenoiserParams::init(arch, &mut rng, InitOptions { zero_output_head: false }).unwrap();
    let x = random_grid(&mut rng, size, size, 1.0).map(f64::abs);
    let r = random_grid(&mut rng, size, size, 0.5);
    let z = r.zip_map(&random_grid(&mut rng, size, size, 1.0), |a, e| a + sigma * e).unwrap();

    let grad = analytic(&params, &z, &x, &r, sigma);
    let mut worst = (0.0, String::new());
    let mut probe = params.clone();
    for k in 0..params.len() {
        let orig = params.values()[k];
        probe.values_mut()[k] = orig + STEP;
        let up = loss(&probe, &z, &x, &r, sigma);
        probe.values_mut()[k] = orig - STEP;
        let down = loss(&probe, &z, &x, &r, sigma);
        probe.values_mut()[k] = orig;
        let fd = (up - down) / (2.0 * STEP);
        let scale = grad[k].abs().max(fd.abs());
        let err = if scale < ABS_FLOOR {
            (grad[k] - fd).abs()
        } else {
            (grad[k] - fd).abs() / scale
        };
        if err > worst.0 {
            let name = params
                .tensors()
                .iter()
                .find(|t| t.range().contains(&k))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            worst = (err, format!("{name}[{k}] analytic {:e} fd {:e}", grad[k], fd));
        }
    }
    worst
}

#[test]
fn tiny_network_gradients_match_finite_differences() {
    for (seed, sigma) in [(1u64, 0.7), (2, 0.05), (3, 3.0)] {
        let (err, at) = worst_relative_error(seed, Architecture::tiny(), 16, sigma);
        eprintln!("seed {seed} sigma {sigma}: worst relative error {err:e} at {at}");
        assert!(err < REL_TOL, "seed {seed} sigma {sigma}: worst {err:e} at {at}");
    }
}

#[test]
fn two_level_network_gradients_match_finite_differences() {
    let arch = Architecture {
        widths: vec![4, 4, 6],
        emb_dim: 4,
        max_groups: 8,
    };
    let (err, at) = worst_relative_error(9, arch, 8, 0.4);
    assert!(err < REL_TOL, "worst {err:e} at {at}");
}
