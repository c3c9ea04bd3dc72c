//! Subcommand implementations. Each writes its outputs plus a
//! `config.toml` echo into its output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use r3d::dataset::{self, SeedSplit};
use r3d::denoiser::{read_checkpoint, write_checkpoint, Checkpoint, PredictionTarget};
use r3d::diffusion::{train, PairedSample, TrainMode};
use r3d::metrics::{evaluate_grids, MetricsReport, ResidualStatsAccumulator};
use r3d::sampler::heun_sample;
use r3d::signal::{self, AdcLayout, RawHeader, SimTarget};
use r3d::Grid2D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::CliError;

pub const PAIR_EXT: &str = "r3dp";
pub const CHECKPOINT_FILE: &str = "checkpoint.r3dw";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STATS_FILE: &str = "residual_stats.csv";
pub const EVAL_HEADER: &str = "frame_id,cd,hd,precision,recall,fscore";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// `*.r3dp` files of a directory, sorted by name, as `(stem, path)`.
pub fn list_frames(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut frames = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(PAIR_EXT) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            frames.push((stem, path));
        }
    }
    frames.sort();
    if frames.is_empty() {
        return Err(CliError::Input(format!("no .{PAIR_EXT} files in {}", dir.display())).into());
    }
    Ok(frames)
}

fn load_frames(frames: &[(String, PathBuf)]) -> Result<Vec<PairedSample>> {
    frames
        .par_iter()
        .map(|(_, p)| dataset::load_pair(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

pub fn synth(cfg: &RunConfig, out: &Path, n_train: usize, n_test: usize, pgm: bool) -> Result<()> {
    let scene = cfg.scene_config()?;
    let split = SeedSplit::new(cfg.seed, n_train, n_test);
    create_dir(out)?;
    for (name, seeds) in [("train", split.train), ("test", split.test)] {
        let dir = out.join(name);
        create_dir(&dir)?;
        let first = seeds.start;
        let samples = dataset::generate(&scene, seeds)?;
        samples.par_iter().enumerate().try_for_each(|(k, s)| -> Result<()> {
            let stem = format!("scene_{:08}", first + k as u64);
            dataset::save_pair(dir.join(format!("{stem}.{PAIR_EXT}")), s)?;
            if pgm {
                dataset::save_pair_pgm(
                    dir.join(format!("{stem}_radar.pgm")),
                    dir.join(format!("{stem}_lidar.pgm")),
                    s,
                )?;
            }
            Ok(())
        })?;
        println!("{name}: {} scenes in {}", samples.len(), dir.display());
    }
    cfg.echo_into(out)
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, mode: TrainMode, out: &Path) -> Result<()> {
    let train_cfg = cfg.train_config()?;
    let frames = list_frames(data)?;
    let samples = load_frames(&frames)?;
    create_dir(out)?;
    let outcome = train(&samples, &train_cfg, mode)?;
    let mut w = create_file(&out.join(CHECKPOINT_FILE))?;
    write_checkpoint(&mut w, &outcome.checkpoint)?;
    w.flush()?;
    let mut w = create_file(&out.join(TRAIN_LOG_FILE))?;
    outcome.log.write_csv(&mut w)?;
    w.flush()?;
    let n = train_cfg.steps;
    println!(
        "trained {} steps in {} mode on {} frames: mean weighted loss {:.4e} (first 10%) -> {:.4e} (last 10%)",
        n,
        mode.as_str(),
        samples.len(),
        outcome.log.mean_weighted_loss(0..n.div_ceil(10)),
        outcome.log.mean_weighted_loss(n - n.div_ceil(10)..n)
    );
    cfg.echo_into(out)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    read_checkpoint(std::io::BufReader::new(file)).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn write_pgm_stack(path: &Path, frames: &[Grid2D]) -> Result<()> {
    let mut w = create_file(path)?;
    for g in frames {
        dataset::write_pgm(&mut w, g)?;
    }
    w.flush()?;
    Ok(())
}

pub fn sample(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, trajectory: bool) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let arch = ckpt.params.architecture();
    if *arch != cfg.architecture() {
        return Err(r3d::Error::Incompatible(format!(
            "checkpoint architecture {:?} differs from the configured {:?}",
            arch,
            cfg.architecture()
        ))
        .into());
    }
    let frames = list_frames(data)?;
    let samples = load_frames(&frames)?;
    let factor = arch.downsampling_factor();
    if let Some((k, s)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.shape().0 % factor != 0 || s.shape().1 % factor != 0)
    {
        return Err(r3d::Error::Incompatible(format!(
            "frame {} is {}x{}, not divisible by the network's factor {factor}",
            frames[k].0,
            s.shape().0,
            s.shape().1
        ))
        .into());
    }
    create_dir(out)?;
    let sampler_cfgs = (0..samples.len())
        .map(|k| cfg.sampler_config(k, trajectory))
        .collect::<Result<Vec<_>>>()?;
    frames
        .par_iter()
        .zip(&samples)
        .zip(&sampler_cfgs)
        .try_for_each(|(((stem, _), s), scfg)| -> Result<()> {
            let x = s.radar();
            let res = heun_sample(&ckpt.params, x, scfg).with_context(|| format!("sampling frame {stem}"))?;
            let enhanced = match ckpt.target {
                PredictionTarget::Residual => res.enhanced,
                PredictionTarget::Direct => res.z0,
            };
            // the prediction takes the input slot; the target rides along for eval
            let pair = PairedSample::new(enhanced.clone(), s.lidar().clone())?;
            dataset::save_pair(out.join(format!("{stem}.{PAIR_EXT}")), &pair)?;
            dataset::save_pgm(out.join(format!("{stem}.pgm")), &enhanced)?;
            if let Some(traj) = res.trajectory {
                let images: Vec<Grid2D> = traj
                    .iter()
                    .map(|st| match ckpt.target {
                        PredictionTarget::Residual => x.zip_map(&st.z, |a, b| a + b),
                        PredictionTarget::Direct => Ok(st.z.clone()),
                    })
                    .collect::<r3d::Result<_>>()?;
                write_pgm_stack(&out.join(format!("{stem}_trajectory.pgm")), &images)?;
            }
            Ok(())
        })?;
    println!("sampled {} frames into {}", samples.len(), out.display());
    cfg.echo_into(out)
}

/// Per-frame metrics; `None` where either image has no point above the
/// extraction threshold.
pub fn eval(cfg: &RunConfig, pred: &Path, truth: &Path, out: &Path) -> Result<()> {
    cfg.check_metric_thresholds()?;
    let frames = list_frames(pred)?;
    let truth_paths: Vec<PathBuf> = frames
        .iter()
        .map(|(stem, _)| {
            let p = truth.join(format!("{stem}.{PAIR_EXT}"));
            if p.is_file() {
                Ok(p)
            } else {
                Err(CliError::Input(format!("no ground truth {} for prediction {stem}", p.display())).into())
            }
        })
        .collect::<Result<_>>()?;
    let reports: Vec<Option<MetricsReport>> = frames
        .par_iter()
        .zip(&truth_paths)
        .map(|((stem, p), t)| -> Result<Option<MetricsReport>> {
            let predicted = dataset::load_pair(p).with_context(|| format!("loading {}", p.display()))?;
            let target = dataset::load_pair(t).with_context(|| format!("loading {}", t.display()))?;
            match evaluate_grids(predicted.radar(), target.lidar(), cfg.point_threshold, cfg.fscore_tau) {
                Ok(r) => Ok(Some(r)),
                Err(r3d::Error::EmptySet(_)) => Ok(None),
                Err(e) => Err(anyhow::Error::new(e).context(format!("evaluating frame {stem}"))),
            }
        })
        .collect::<Result<_>>()?;

    create_dir(out)?;
    let mut w = create_file(&out.join(METRICS_FILE))?;
    writeln!(w, "{EVAL_HEADER}")?;
    for ((stem, _), r) in frames.iter().zip(&reports) {
        match r {
            Some(r) => writeln!(w, "{stem},{},{},{},{},{}", r.cd, r.hd, r.precision, r.recall, r.fscore)?,
            None => writeln!(w, "{stem},nan,nan,nan,nan,nan")?,
        }
    }
    let valid: Vec<MetricsReport> = reports.iter().flatten().copied().collect();
    let skipped = reports.len() - valid.len();
    match MetricsReport::mean(&valid) {
        Some(m) => {
            writeln!(w, "mean,{},{},{},{},{}", m.cd, m.hd, m.precision, m.recall, m.fscore)?;
            println!(
                "{} frames: CD {:.4} HD {:.4} precision {:.4} recall {:.4} F {:.4}",
                valid.len(),
                m.cd,
                m.hd,
                m.precision,
                m.recall,
                m.fscore
            );
        }
        None => writeln!(w, "mean,nan,nan,nan,nan,nan")?,
    }
    w.flush()?;
    if skipped > 0 {
        eprintln!("warning: {skipped} frame(s) had an empty point set and were excluded from the mean");
    }
    cfg.echo_into(out)
}

pub fn stats(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    cfg.check_metric_thresholds()?;
    let frames = list_frames(data)?;
    let samples = load_frames(&frames)?;
    let mut rows = Vec::new();
    for (name, pick) in [
        ("residual", PairedSample::residual as fn(&PairedSample) -> &Grid2D),
        ("lidar", PairedSample::lidar),
        ("radar", PairedSample::radar),
    ] {
        let mut acc = ResidualStatsAccumulator::new(cfg.activity_threshold);
        for s in &samples {
            acc.add(pick(s));
        }
        let st = acc.finish();
        println!("{name:>8}: {st}");
        rows.push((name, st));
    }
    create_dir(out)?;
    let mut w = create_file(&out.join(STATS_FILE))?;
    writeln!(w, "image,{}", r3d::metrics::ResidualStats::CSV_HEADER)?;
    for (name, st) in rows {
        write!(w, "{name},")?;
        st.write_csv_row(&mut w)?;
    }
    w.flush()?;
    cfg.echo_into(out)
}

pub fn radar_simulate(cfg: &RunConfig, out: &Path, n_targets: usize, noise_std: f64) -> Result<()> {
    let radar = cfg.radar_config()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = radar.range_crop;
    let margin = ((hi - lo) / 8).max(1) as f64;
    let quarter = (radar.chirps_per_frame / 4) as f64;
    let targets: Vec<SimTarget> = (0..n_targets)
        .map(|_| SimTarget {
            range_bin: rng.random_range(lo as f64 + margin..hi as f64 - margin),
            doppler_bin: if quarter > 0.0 {
                rng.random_range(-quarter..=quarter).round()
            } else {
                0.0
            },
            azimuth: rng.random_range(-0.8..0.8),
            amplitude: rng.random_range(100.0..400.0),
        })
        .collect();
    let layout = AdcLayout::default();
    let raw = signal::simulate_adc(&targets, &radar, layout, noise_std, &mut rng)?;
    let header = RawHeader {
        layout,
        samples_per_chirp: radar.samples_per_chirp,
        chirps_per_frame: radar.chirps_per_frame,
        num_tx: radar.num_tx,
        num_rx: radar.num_rx,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut w = create_file(out)?;
    signal::write_raw_frame(&mut w, &header, &raw)?;
    w.flush()?;
    println!("wrote {n_targets}-target frame to {}", out.display());
    Ok(())
}

pub fn radar_process(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening raw frame {}", input.display()))?;
    let (header, raw) = signal::read_raw_frame(std::io::BufReader::new(file))
        .with_context(|| format!("reading raw frame {}", input.display()))?;
    let radar = cfg.radar_config()?;
    if (header.samples_per_chirp, header.chirps_per_frame, header.num_tx, header.num_rx)
        != (radar.samples_per_chirp, radar.chirps_per_frame, radar.num_tx, radar.num_rx)
    {
        return Err(r3d::Error::Incompatible(format!(
            "raw frame is {}x{} with {} tx / {} rx; configuration expects {}x{} with {} tx / {} rx",
            header.samples_per_chirp,
            header.chirps_per_frame,
            header.num_tx,
            header.num_rx,
            radar.samples_per_chirp,
            radar.chirps_per_frame,
            radar.num_tx,
            radar.num_rx
        ))
        .into());
    }
    let frame = signal::process_frame(&raw, &radar, header.layout, &cfg.cfar_params()?, &cfg.bev_spec()?)?;
    create_dir(out)?;
    dataset::save_pgm(out.join("bev.pgm"), &frame.bev.image)?;
    dataset::save_pgm(out.join("polar.pgm"), &frame.polar)?;
    let mut w = create_file(&out.join("points.csv"))?;
    writeln!(w, "x,y,snr")?;
    for p in &frame.points {
        writeln!(w, "{},{},{}", p.x, p.y, p.snr_db)?;
    }
    w.flush()?;
    let mut w = create_file(&out.join("detections.csv"))?;
    writeln!(w, "range_bin,doppler_bin,angle_bin,snr_db")?;
    for d in &frame.detections {
        writeln!(w, "{},{},{},{}", d.range_bin, d.doppler_bin, d.angle_bin, d.snr_db)?;
    }
    w.flush()?;
    println!(
        "{} detections, {} outside the BEV extent",
        frame.detections.len(),
        frame.bev.dropped
    );
    cfg.echo_into(out)
}
