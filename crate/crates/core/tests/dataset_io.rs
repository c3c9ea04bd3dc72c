//! Pair-file round trips, malformed input handling, and the residual
//! concentration property of the default synthetic degradation.

use r3d::dataset::{
    generate, load_pair, load_pair_pgm, read_pair, read_pgm, save_pair, save_pair_pgm, scene_for_seed, write_pair,
    write_pgm, SceneConfig, PAIR_VERSION,
};
use r3d::diffusion::PairedSample;
use r3d::metrics::{ResidualStatsAccumulator, DEFAULT_ACTIVITY_THRESHOLD};
use r3d::{Error, Grid2D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encode(s: &PairedSample) -> Vec<u8> {
    let mut b = Vec::new();
    write_pair(&mut b, s).unwrap();
    b
}

#[test]
fn thousand_random_pairs_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut g = || Grid2D::from_fn(h, w, |_, _| rng.random_range(-2.0f32..2.0) as f64);
        let s = PairedSample::new(g(), g()).unwrap();
        let bytes = encode(&s);
        assert_eq!(bytes.len(), 14 + 8 * h * w);
        assert_eq!(read_pair(bytes.as_slice()).unwrap(), s);
    }
}

#[test]
fn synthetic_scenes_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SceneConfig::default();
    for seed in 0..10 {
        let s = scene_for_seed(&cfg, seed).unwrap();
        let path = dir.path().join(format!("{seed}.r3dp"));
        save_pair(&path, &s).unwrap();
        let back = load_pair(&path).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.lidar().values().iter().zip(s.lidar().values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn every_truncation_is_a_format_error() {
    let s = scene_for_seed(&SceneConfig::default(), 3).unwrap();
    let bytes = encode(&s);
    for cut in (0..bytes.len()).step_by(97).chain([1, 5, 13, bytes.len() - 1]) {
        match read_pair(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}

#[test]
fn header_errors() {
    let s = scene_for_seed(&SceneConfig::default(), 4).unwrap();
    let bytes = encode(&s);
    let mut bad = bytes.clone();
    bad[2] = b'Q';
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes.clone();
    bad[4..6].copy_from_slice(&(PAIR_VERSION + 1).to_le_bytes());
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::UnsupportedVersion { found: 2, supported: 1 })));
    let mut bad = bytes.clone();
    bad[6..10].copy_from_slice(&65u32.to_le_bytes());
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[10..14].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::Format { offset: 10, .. })));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::Format { .. })));
    let mut bad = bytes;
    bad[14..18].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(read_pair(bad.as_slice()), Err(Error::Format { offset: 14, .. })));
}

#[test]
fn pgm_round_trip_is_eight_bit() {
    let g = Grid2D::from_fn(5, 7, |r, c| (r * 7 + c) as f64 / 34.0);
    let mut bytes = Vec::new();
    write_pgm(&mut bytes, &g).unwrap();
    assert!(bytes.starts_with(b"P5\n7 5\n255\n"));
    let back = read_pgm(bytes.as_slice()).unwrap();
    assert_eq!(back.shape(), (5, 7));
    assert!(back.max_abs_diff(&g).unwrap() <= 0.5 / 255.0 + 1e-12);
    for v in back.values() {
        assert_eq!((v * 255.0).round() / 255.0, *v);
    }
    // the quantized image is a fixed point
    let mut again = Vec::new();
    write_pgm(&mut again, &back).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn pgm_header_with_comments_and_errors() {
    let mut bytes = b"P5 # comment\n2 # w\n 1\n255\n".to_vec();
    bytes.extend([0u8, 255]);
    let g = read_pgm(bytes.as_slice()).unwrap();
    assert_eq!(g.values(), [0.0, 1.0]);
    assert!(matches!(read_pgm(&b"P2\n1 1\n255\n\0"[..]), Err(Error::Format { offset: 0, .. })));
    assert!(matches!(read_pgm(&b"P5\n2 2\n255\n\0\0"[..]), Err(Error::Format { .. })));
    assert!(matches!(read_pgm(&b"P5\n1 1\n65535\n\0\0"[..]), Err(Error::Format { .. })));
    assert!(matches!(read_pgm(&b"P5\nx 1\n255\n\0"[..]), Err(Error::Format { offset: 3, .. })));
}

#[test]
fn pgm_pair_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = scene_for_seed(&SceneConfig::default(), 5).unwrap();
    let (rx, ly) = (dir.path().join("x.pgm"), dir.path().join("y.pgm"));
    save_pair_pgm(&rx, &ly, &s).unwrap();
    let back = load_pair_pgm(&rx, &ly).unwrap();
    assert!(back.radar().max_abs_diff(s.radar()).unwrap() <= 0.5 / 255.0 + 1e-9);
    assert!(back.lidar().max_abs_diff(s.lidar()).unwrap() <= 0.5 / 255.0 + 1e-9);
}

#[test]
fn residual_is_more_concentrated_than_target() {
    let scenes = generate(&SceneConfig::default(), 0..200).unwrap();
    let mut r_acc = ResidualStatsAccumulator::new(DEFAULT_ACTIVITY_THRESHOLD);
    let mut y_acc = ResidualStatsAccumulator::new(DEFAULT_ACTIVITY_THRESHOLD);
    for s in &scenes {
        r_acc.add(s.residual());
        y_acc.add(s.lidar());
    }
    let (r, y) = (r_acc.finish(), y_acc.finish());
    println!("residual: {r}");
    println!("target:   {y}");
    assert!(!r.degenerate && !y.degenerate);
    assert!(r.stddev < y.stddev);
}
