//! Network shape/sensitivity properties and training-loop behaviour.

use r3d::attention::GuidanceConfig;
use r3d::dataset::{synth_scene, SceneConfig};
use r3d::denoiser::{self, Architecture, DenoiserParams, InitOptions};
use r3d::diffusion::{forward_noise, standard_normal_grid, train, PairedSample, TrainConfig, TrainMode};
use r3d::Grid2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

fn random_params(seed: u64, arch: Architecture) -> DenoiserParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenoiserParams::init(arch, &mut rng, InitOptions { zero_output_head: false }).unwrap()
}

fn scenes(n: u64, size: usize) -> Vec<PairedSample> {
    let cfg = SceneConfig {
        height: size,
        width: size,
        ..SceneConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    (0..n).map(|_| synth_scene(&cfg, &mut rng).unwrap()).collect()
}

fn quick(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        architecture: Architecture::tiny(),
        steps,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn output_matches_input_shape() {
    for (arch, size) in [
        (Architecture::tiny(), 32),
        (Architecture::tiny(), 64),
        (Architecture::tiny(), 128),
        (Architecture::default(), 32),
    ] {
        let params = random_params(1, arch);
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        let z = random_grid(&mut rng, size, size);
        let x = random_grid(&mut rng, size, size);
        let out = denoiser::denoise(&params, &z, &x, 0.7).unwrap();
        assert_eq!(out.shape(), (size, size));
        assert!(out.is_finite());
    }
}

#[test]
fn output_depends_on_every_input() {
    let params = random_params(2, Architecture::tiny());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = random_grid(&mut rng, 16, 16);
    let x = random_grid(&mut rng, 16, 16);
    let base = denoiser::denoise(&params, &z, &x, 1.0).unwrap();

    let other_sigma = denoiser::denoise(&params, &z, &x, 5.0).unwrap();
    let other_z = denoiser::denoise(&params, &random_grid(&mut rng, 16, 16), &x, 1.0).unwrap();
    let other_x = denoiser::denoise(&params, &z, &random_grid(&mut rng, 16, 16), 1.0).unwrap();
    for (name, out) in [("sigma", other_sigma), ("noisy input", other_z), ("condition", other_x)] {
        assert!(base.max_abs_diff(&out).unwrap() > 1e-6, "insensitive to {name}");
    }
    // and repeated evaluation is exact
    assert_eq!(base, denoiser::denoise(&params, &z, &x, 1.0).unwrap());
}

#[test]
fn zero_output_head_predicts_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = DenoiserParams::init(Architecture::tiny(), &mut rng, InitOptions::default()).unwrap();
    let z = random_grid(&mut rng, 16, 16);
    let x = random_grid(&mut rng, 16, 16);
    for sigma in [0.002, 1.0, 80.0] {
        let out = denoiser::denoise(&params, &z, &x, sigma).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn backward_is_linear_in_output_gradient() {
    let params = random_params(5, Architecture::tiny());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = random_grid(&mut rng, 8, 8);
    let x = random_grid(&mut rng, 8, 8);
    let (_, tape) = denoiser::forward(&params, &z, &x, 0.3).unwrap();
    let a = random_grid(&mut rng, 8, 8);
    let b = random_grid(&mut rng, 8, 8);
    let ab = a.zip_map(&b, |p, q| 2.0 * p - 3.0 * q).unwrap();
    let ga = denoiser::backward(&params, &tape, &a).unwrap();
    let gb = denoiser::backward(&params, &tape, &b).unwrap();
    let gab = denoiser::backward(&params, &tape, &ab).unwrap();
    for ((p, q), r) in ga.iter().zip(&gb).zip(&gab) {
        let expected = 2.0 * p - 3.0 * q;
        assert!((expected - r).abs() <= 1e-9 * (1.0 + expected.abs()));
    }
    let zero = denoiser::backward(&params, &tape, &Grid2D::zeros(8, 8)).unwrap();
    assert!(zero.iter().all(|&g| g == 0.0), "a perfect prediction has zero gradient");
}

#[test]
fn overfits_a_single_pair() {
    let data = scenes(1, 32);
    let cfg = TrainConfig {
        steps: 500,
        learning_rate: 0.01,
        ..quick(0, 8)
    };
    let trained = train(&data, &cfg, TrainMode::Residual).unwrap().checkpoint.params;

    // Score the noise-weighted objective on fixed draws from the training
    // distribution; the untrained network (zero head) predicts 0.
    let target = data[0].residual();
    let mean_sq = target.map(|v| v * v).mean();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let (mut trained_obj, mut untrained_obj) = (0.0, 0.0);
    for _ in 0..64 {
        let (_, sigma) = cfg.schedule.draw_timestep(&mut rng);
        let eps = standard_normal_grid(&mut rng, 32, 32);
        let z = forward_noise(target, sigma, &eps).unwrap();
        let out = denoiser::denoise(&trained, &z, data[0].radar(), sigma).unwrap();
        trained_obj += out.zip_map(target, |a, b| (a - b).powi(2)).unwrap().mean() / (sigma * sigma);
        untrained_obj += mean_sq / (sigma * sigma);
    }
    let ratio = trained_obj / untrained_obj;
    assert!(ratio < 0.2, "objective only fell to {ratio:.3} of its initial value");
}

#[test]
fn neutral_guidance_reproduces_residual_training() {
    let data = scenes(4, 32);
    let mut cfg = quick(25, 11);
    cfg.guidance = GuidanceConfig {
        alpha_low: 1.0,
        beta_low: 1.0,
        ..GuidanceConfig::default()
    };
    let a = train(&data, &cfg, TrainMode::R3d).unwrap();
    let b = train(&data, &cfg, TrainMode::Residual).unwrap();
    assert_eq!(a.checkpoint.params, b.checkpoint.params);
    assert_eq!(a.log.records.len(), b.log.records.len());
    for (ra, rb) in a.log.records.iter().zip(&b.log.records) {
        assert_eq!((ra.step, ra.t, ra.sigma), (rb.step, rb.t, rb.sigma));
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
        assert_eq!(ra.weighted_loss.to_bits(), rb.weighted_loss.to_bits());
    }
}

#[test]
fn training_is_reproducible_and_seed_dependent() {
    let data = scenes(4, 32);
    let csv = |seed| {
        let out = train(&data, &quick(20, seed), TrainMode::R3d).unwrap();
        let mut buf = Vec::new();
        out.log.write_csv(&mut buf).unwrap();
        (buf, out.checkpoint.params)
    };
    let (log_a, p_a) = csv(1);
    let (log_b, p_b) = csv(1);
    let (log_c, _) = csv(2);
    assert_eq!(log_a, log_b);
    assert_eq!(p_a, p_b);
    assert_ne!(log_a, log_c);
}

#[test]
fn guidance_applies_only_at_low_noise() {
    let data = scenes(3, 32);
    let cfg = quick(60, 5);
    let threshold = cfg.guidance.sigma_threshold;
    let r3d = train(&data, &cfg, TrainMode::R3d).unwrap();
    assert!(r3d.log.records.iter().any(|r| r.guided));
    assert!(r3d.log.records.iter().any(|r| !r.guided));
    for r in &r3d.log.records {
        assert_eq!(r.guided, r.sigma <= threshold, "sigma {}", r.sigma);
        assert!(r.loss.is_finite() && r.weighted_loss.is_finite());
    }
    for mode in [TrainMode::Direct, TrainMode::Residual] {
        let out = train(&data, &cfg, mode).unwrap();
        assert!(out.log.records.iter().all(|r| !r.guided));
    }
}

#[test]
fn rejects_mixed_shapes() {
    let mut data = scenes(2, 32);
    data.extend(scenes(1, 64));
    assert!(train(&data, &quick(1, 0), TrainMode::Residual).is_err());
}
