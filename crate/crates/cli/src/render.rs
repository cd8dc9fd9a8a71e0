use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use spgs::io::save_image;
use spgs::metrics::{psnr, ssim};
use spgs::model::{RenderPath, SpgsModel};
use spgs::scene::Camera;

use crate::{frame_stem, load_checkpoint, load_dataset, write_json, GlobalArgs, PathMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Render every camera at this time, or `all` for each frame's own time.
    #[arg(long, default_value = "all")]
    t: String,
    #[arg(long, value_enum, default_value = "interp")]
    path_mode: PathMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub name: String,
    pub time: f64,
    /// Absent when the frame has no image at the rendered time.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, PartialEq, Serialize)]
pub struct RenderMetrics {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
}

fn parse_time(s: &str) -> Result<Option<f64>> {
    if s == "all" {
        return Ok(None);
    }
    let t: f64 = s.parse().with_context(|| format!("--t expects a number or `all`, got {s:?}"))?;
    if !t.is_finite() {
        bail!("--t must be finite");
    }
    Ok(Some(t))
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

pub fn run_render(g: &GlobalArgs, a: RenderArgs) -> Result<()> {
    let cfg = g.config(None)?;
    let model = load_checkpoint(&a.ckpt)?;
    let dataset = load_dataset(&a.data)?;
    let fixed = parse_time(&a.t)?;
    let frames = match a.split {
        Split::Train => &dataset.train,
        Split::Test => &dataset.test,
    };
    std::fs::create_dir_all(&a.out)?;
    let path: RenderPath = a.path_mode.into();
    let mut rows = Vec::with_capacity(frames.len());
    for frame in frames {
        let t = fixed.unwrap_or(frame.time);
        let rendered = model.render(&frame.camera, t, path, &dataset.background, &cfg.train.render)?;
        let image = &rendered.output.image;
        let suffix = fixed.map_or(String::new(), |t| format!("_t{t}"));
        save_image(image, &a.out.join(format!("{}{suffix}.png", frame_stem(&frame.name))))?;
        let scored = frame.image.as_ref().filter(|_| (t - frame.time).abs() < 1e-9);
        let (p, s) = match scored {
            Some(gt) => (Some(psnr(image, gt)?), Some(ssim(image, gt)?)),
            None => (None, None),
        };
        rows.push(FrameMetrics { name: frame.name.clone(), time: t, psnr: p, ssim: s });
    }
    let metrics = RenderMetrics {
        mean_psnr: mean(rows.iter().filter_map(|r| r.psnr)),
        mean_ssim: mean(rows.iter().filter_map(|r| r.ssim)),
        frames: rows,
    };
    write_json(&a.out.join("metrics.json"), &metrics)?;
    info!("rendered {} frames to {}", metrics.frames.len(), a.out.display());
    println!("{}", serde_json::json!({ "mean_psnr": metrics.mean_psnr, "mean_ssim": metrics.mean_ssim }));
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Network,
    Interp,
    Both,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, value_enum, default_value = "both")]
    path_mode: BenchMode,
    /// Use this dataset's test cameras instead of an orbit around the model.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Row count of the per-Gaussian deformation comparison.
    #[arg(long, default_value_t = 50_000)]
    gaussians: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub fps_network: Option<f64>,
    pub fps_interp: Option<f64>,
    pub deform_us_per_call_sp: f64,
    pub deform_us_per_call_per_gaussian: f64,
    pub superpoints: usize,
    pub gaussians: usize,
    pub frames: usize,
}

/// Cameras circling the model's centroid at 2.5 times its radius.
pub fn orbit_cameras(model: &SpgsModel, n: usize, width: usize, height: usize) -> Vec<Camera> {
    let pos: Vec<Vector3<f64>> = (0..model.cloud.len()).map(|i| model.cloud.position(i)).collect();
    let center = pos.iter().fold(Vector3::zeros(), |a, p| a + p) / pos.len().max(1) as f64;
    let radius = pos.iter().map(|p| (p - center).norm()).fold(1e-3, f64::max);
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            let eye = center + Vector3::new(a.cos(), a.sin(), 0.3) * 2.5 * radius;
            Camera::look_at(eye, center, Vector3::z(), 0.8, width, height)
        })
        .collect()
}

fn fps(model: &SpgsModel, cams: &[Camera], path: RenderPath, bg: &Vector3<f64>, g: &GlobalArgs) -> Result<f64> {
    let settings = g.config(None)?.train.render;
    let time = |i: usize| if cams.len() > 1 { i as f64 / (cams.len() - 1) as f64 } else { 0.0 };
    model.render(&cams[0], 0.0, path, bg, &settings)?;
    let start = Instant::now();
    for (i, cam) in cams.iter().enumerate() {
        model.render(cam, time(i), path, bg, &settings)?;
    }
    Ok(cams.len() as f64 / start.elapsed().as_secs_f64())
}

/// Mean wall time of one deformation-network forward over `rows` points,
/// repeated for at least 0.2 s.
pub fn deform_call_us(model: &SpgsModel, rows: usize, seed: u64) -> Result<f64> {
    let net = model.deform.as_ref().context("model has no deformation network")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vector3<f64>> = (0..rows).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
    let start = Instant::now();
    let mut calls = 0;
    while calls == 0 || start.elapsed().as_secs_f64() < 0.2 {
        std::hint::black_box(net.predict(&points, 0.5));
        calls += 1;
    }
    Ok(start.elapsed().as_secs_f64() * 1e6 / calls as f64)
}

pub fn run_bench(g: &GlobalArgs, a: BenchArgs) -> Result<()> {
    if a.frames == 0 {
        bail!("--frames must be positive");
    }
    let mut model = load_checkpoint(&a.ckpt)?;
    let (cams, bg) = match &a.data {
        Some(dir) => {
            let d = load_dataset(dir)?;
            let source = if d.test.is_empty() { &d.train } else { &d.test };
            let cams: Vec<Camera> = source.iter().cycle().take(a.frames).map(|f| f.camera.clone()).collect();
            (cams, d.background)
        }
        None => (orbit_cameras(&model, a.frames, a.width, a.height), Vector3::zeros()),
    };
    if model.cache.is_none() && model.deform.is_some() {
        model.build_cache()?;
    }
    let run_net = a.path_mode != BenchMode::Interp;
    let run_interp = a.path_mode != BenchMode::Network;
    let fps_network = run_net.then(|| fps(&model, &cams, RenderPath::Network, &bg, g)).transpose()?;
    let fps_interp = run_interp.then(|| fps(&model, &cams, RenderPath::Interp, &bg, g)).transpose()?;
    let m = model.superpoints()?.len();
    let seed = g.seed.unwrap_or(0);
    let report = BenchReport {
        fps_network,
        fps_interp,
        deform_us_per_call_sp: deform_call_us(&model, m, seed)?,
        deform_us_per_call_per_gaussian: deform_call_us(&model, a.gaussians, seed)?,
        superpoints: m,
        gaussians: a.gaussians,
        frames: a.frames,
    };
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
