//! Analytic-oracle suites runnable from the installed binary.

use std::time::Instant;

use r3d::attention::GuidanceConfig;
use r3d::denoiser::{self, Architecture, Denoise, DenoiserParams, InitOptions, OracleDenoiser};
use r3d::diffusion::{r3d_loss, residual_loss};
use r3d::metrics::{evaluate, reference, PointSet2D};
use r3d::sampler::{heun_integrate, heun_sample, initial_state, SamplerConfig};
use r3d::schedule::NoiseSchedule;
use r3d::signal::{os_cfar, CfarParams};
use r3d::Grid2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Suite = fn() -> Result<String, String>;

fn verdict(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

fn schedule() -> Result<String, String> {
    let mut worst = 0.0f64;
    for t in [2, 18, 1000] {
        let s = NoiseSchedule::new(7.0, 0.002, 80.0, t).map_err(|e| e.to_string())?;
        worst = worst
            .max((s.sigmas()[0] / 80.0 - 1.0).abs())
            .max((s.sigmas()[t - 1] / 0.002 - 1.0).abs());
    }
    verdict(worst < 1e-12, format!("endpoint relative error {worst:.1e}"))
}

fn sampler_exactness() -> Result<String, String> {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = grid(&mut rng, 64, 64);
        let r = grid(&mut rng, 64, 64);
        let cfg = SamplerConfig {
            seed,
            terminal_euler_step: true,
            ..Default::default()
        };
        let y = heun_sample(&OracleDenoiser::constant(r.clone()), &x, &cfg)
            .map_err(|e| e.to_string())?
            .enhanced;
        let target = x.zip_map(&r, |a, b| a + b).map_err(|e| e.to_string())?;
        worst = worst.max(y.max_abs_diff(&target).map_err(|e| e.to_string())?);
    }
    verdict(worst < 1e-9, format!("constant oracle, 20 seeds: max error {worst:.1e}"))
}

fn sampler_order() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = grid(&mut rng, 16, 16);
    let f = OracleDenoiser::new(mu, 0.5).map_err(|e| e.to_string())?;
    let x = Grid2D::zeros(16, 16);
    let z_t = initial_state(16, 16, &SamplerConfig::default());
    let fine = NoiseSchedule::new(7.0, 0.002, 80.0, 10_000).map_err(|e| e.to_string())?;
    let mut reference = z_t.clone();
    for p in fine.sigmas().windows(2) {
        let d = f.denoise(&reference, &x, p[0]).map_err(|e| e.to_string())?;
        reference = reference
            .zip_map(&d, |z, r| z + (p[1] - p[0]) * (z - r) / p[0])
            .map_err(|e| e.to_string())?;
    }
    let err = |t: usize| -> Result<f64, String> {
        let cfg = SamplerConfig {
            schedule: NoiseSchedule::new(7.0, 0.002, 80.0, t).map_err(|e| e.to_string())?,
            ..Default::default()
        };
        let (z, _) = heun_integrate(&f, &x, z_t.clone(), &cfg).map_err(|e| e.to_string())?;
        z.max_abs_diff(&reference).map_err(|e| e.to_string())
    };
    let ratio = err(18)? / err(36)?;
    verdict((3.0..=5.0).contains(&ratio), format!("Heun error ratio T 36->18: {ratio:.2}"))
}

fn gradient_check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = InitOptions {
        zero_output_head: false,
    };
    let mut params = DenoiserParams::init(Architecture::tiny(), &mut rng, opts).map_err(|e| e.to_string())?;
    let (z, x, r) = (grid(&mut rng, 16, 16), grid(&mut rng, 16, 16), grid(&mut rng, 16, 16));
    let sigma = 0.7;
    let loss = |p: &DenoiserParams| -> f64 {
        let out = denoiser::denoise(p, &z, &x, sigma).expect("valid inputs");
        out.values().iter().zip(r.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / out.len() as f64
    };
    let (out, tape) = denoiser::forward(&params, &z, &x, sigma).map_err(|e| e.to_string())?;
    let n = out.len() as f64;
    let d = out.zip_map(&r, |a, b| 2.0 * (a - b) / n).map_err(|e| e.to_string())?;
    let analytic = denoiser::backward(&params, &tape, &d).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        let orig = params.values()[k];
        params.values_mut()[k] = orig + 1e-4;
        let up = loss(&params);
        params.values_mut()[k] = orig - 1e-4;
        let down = loss(&params);
        params.values_mut()[k] = orig;
        let fd = (up - down) / 2e-4;
        let scale = fd.abs().max(analytic[k].abs());
        if scale > 1e-8 {
            worst = worst.max((fd - analytic[k]).abs() / scale);
        }
    }
    verdict(
        worst < 1e-4,
        format!("{} parameters, worst relative error {worst:.2e}", params.len()),
    )
}

fn loss_identities() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = GuidanceConfig::default();
    let mut ok = true;
    for _ in 0..50 {
        let (a, b) = (grid(&mut rng, 8, 8), grid(&mut rng, 8, 8));
        let w = Grid2D::from_fn(8, 8, |_, _| rng.random_range(1.0..2.0));
        let hi = rng.random_range(1.5..80.0);
        let lo = rng.random_range(0.002..1.0);
        let l = |s: f64, w: &Grid2D| r3d_loss(&a, &b, s, w, &g).map(f64::to_bits).ok();
        let base = |s: f64| residual_loss(&a, &b, s).ok();
        ok &= l(hi, &w) == base(hi).map(f64::to_bits);
        ok &= l(lo, &Grid2D::filled(8, 8, 1.0)) == base(lo).map(f64::to_bits);
        ok &= l(lo, &Grid2D::filled(8, 8, 2.0)) == base(lo).map(|v| (4.0 * v).to_bits());
    }
    verdict(ok, "branch, neutral-weight and 4x identities bit-exact".into())
}

fn metric_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bad = 0;
    for i in 0..200 {
        let mut set = || {
            let n = rng.random_range(1..=256);
            let pts = (0..n)
                .map(|_| {
                    if i % 2 == 0 {
                        [rng.random_range(0..32) as f64, rng.random_range(0..32) as f64]
                    } else {
                        [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)]
                    }
                })
                .collect();
            PointSet2D::new(pts)
        };
        let (p, q) = (set().map_err(|e| e.to_string())?, set().map_err(|e| e.to_string())?);
        let fast = evaluate(&p, &q, 2.0).map_err(|e| e.to_string())?;
        let same = fast.cd == reference::chamfer(&p, &q)
            && fast.hd == reference::hausdorff(&p, &q)
            && (fast.precision, fast.recall, fast.fscore) == reference::fscore(&p, &q, 2.0);
        bad += usize::from(!same);
    }
    verdict(bad == 0, format!("200 instances, {bad} mismatches against brute force"))
}

fn cfar_equivalence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for trial in 0..5 {
        let p = CfarParams::for_false_alarm_rate(1 + trial % 2, 3, 1e-2).map_err(|e| e.to_string())?;
        let mut map = Grid2D::from_fn(48, 48, |_, _| -(1.0 - rng.random::<f64>()).ln());
        for _ in 0..5 {
            let (r, c) = (rng.random_range(0..48), rng.random_range(0..48));
            map[(r, c)] *= 40.0;
        }
        let fast: Vec<(usize, usize)> = os_cfar(&map, &p)
            .map_err(|e| e.to_string())?
            .iter()
            .map(|h| (h.row, h.col))
            .collect();
        let reach = (p.guard + p.train) as i64;
        let full = CfarParams::window_cells(p.guard, p.train);
        let mut slow = Vec::new();
        for i in 0..48i64 {
            for j in 0..48i64 {
                let mut cells = Vec::new();
                for r in (i - reach).max(0)..=(i + reach).min(47) {
                    for c in (j - reach).max(0)..=(j + reach).min(47) {
                        if (r - i).abs() > p.guard as i64 || (c - j).abs() > p.guard as i64 {
                            cells.push(map[(r as usize, c as usize)]);
                        }
                    }
                }
                cells.sort_by(f64::total_cmp);
                let k = (p.order * cells.len()).div_ceil(full).clamp(1, cells.len());
                if map[(i as usize, j as usize)] > p.alpha * cells[k - 1] {
                    slow.push((i as usize, j as usize));
                }
            }
        }
        bad += usize::from(fast != slow);
    }
    verdict(bad == 0, format!("5 maps, {bad} differing from the per-cell oracle"))
}

pub const SUITES: [(&str, Suite); 7] = [
    ("schedule endpoints", schedule),
    ("sampler exactness", sampler_exactness),
    ("sampler order", sampler_order),
    ("gradient check", gradient_check),
    ("loss identities", loss_identities),
    ("metric brute-force equivalence", metric_equivalence),
    ("CFAR brute-force equivalence", cfar_equivalence),
];

/// Runs every suite, printing one line each; returns the failure count.
pub fn run() -> usize {
    let mut failed = 0;
    for (name, suite) in SUITES {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(suite).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {name}: {d} [{secs:.2}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d} [{secs:.2}s]");
            }
        }
    }
    failed
}
