use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::info;
use serde::Serialize;
use spgs::io::edit::{apply_edit_script, load_edit_script};
use spgs::io::{load_ply, load_trajectories, save_checkpoint, save_image};
use spgs::model::RenderPath;
use spgs::train::{distill, distillation_error, estimate_pose, initial_transforms, PoseEstimate};

use crate::render::Split;
use crate::{frame_stem, load_checkpoint, load_dataset, write_json, GlobalArgs};

#[derive(Args, Debug)]
pub struct EditArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// JSON array of edit operations.
    #[arg(long)]
    script: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also render the edited model's test views into this directory.
    #[arg(long, requires = "data")]
    render: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
}

pub fn run_edit(g: &GlobalArgs, a: EditArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let script = load_edit_script(&a.script).with_context(|| format!("reading {}", a.script.display()))?;
    let base = a.script.parent().unwrap_or(Path::new("."));
    let edited = apply_edit_script(&model, &script, base)?;
    save_checkpoint(&edited, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!("{} operations applied, {} → {} Gaussians", script.len(), model.cloud.len(), edited.cloud.len());
    if let (Some(dir), Some(data)) = (&a.render, &a.data) {
        let settings = g.config(None)?.train.render;
        let dataset = load_dataset(data)?;
        let path = if edited.cache.is_some() { RenderPath::Interp } else { RenderPath::Network };
        std::fs::create_dir_all(dir)?;
        for frame in &dataset.test {
            let r = edited.render(&frame.camera, frame.time, path, &dataset.background, &settings)?;
            save_image(&r.output.image, &dir.join(format!("{}.png", frame_stem(&frame.name))))?;
        }
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct PoseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Per-frame `name,time,psnr`; the transforms go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Adam iterations per frame.
    #[arg(long)]
    iters: Option<usize>,
}

#[derive(Serialize)]
struct PoseRecord<'a> {
    name: &'a str,
    time: f64,
    psnr: f64,
    /// Per superpoint `[ωx, ωy, ωz, tx, ty, tz]`.
    transforms: Vec<[f64; 6]>,
}

pub fn run_pose(g: &GlobalArgs, a: PoseArgs) -> Result<()> {
    let mut cfg = g.config(None)?.pose;
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    let model = load_checkpoint(&a.ckpt)?;
    let dataset = load_dataset(&a.data)?;
    let mut frames = match a.split {
        Split::Train => dataset.train.clone(),
        Split::Test => dataset.test.clone(),
    };
    if frames.is_empty() {
        bail!("the {:?} split has no frames", a.split);
    }
    frames.sort_by(|x, y| x.time.total_cmp(&y.time));
    let init = initial_transforms(&model)?;
    let estimates = estimate_pose(&model, &frames, &dataset.background, init, &cfg, &mut |e: &PoseEstimate| {
        info!("{} t={:.3} psnr {:.2}", e.name, e.time, e.psnr);
    })?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut csv = csv::Writer::from_path(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    csv.write_record(["name", "time", "psnr"])?;
    for e in &estimates {
        csv.write_record([e.name.clone(), e.time.to_string(), e.psnr.to_string()])?;
    }
    csv.flush()?;
    let records: Vec<PoseRecord> = estimates
        .iter()
        .map(|e| PoseRecord { name: &e.name, time: e.time, psnr: e.psnr, transforms: e.transforms.iter().map(|x| x.to_array()).collect() })
        .collect();
    write_json(&a.out.with_extension("json"), &records)
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    /// Teacher trajectories.
    #[arg(long)]
    traj: PathBuf,
    /// Canonical Gaussians of the student, one per trajectory.
    #[arg(long)]
    cloud: PathBuf,
    /// Optional images supervising the student's renders.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
}

pub fn run_distill(g: &GlobalArgs, a: DistillArgs) -> Result<()> {
    let mut cfg = g.config(None)?.distill_config();
    if let Some(n) = a.iters {
        cfg.iters = n;
    }
    let teacher = load_trajectories(&a.traj).with_context(|| format!("reading {}", a.traj.display()))?;
    let cloud = load_ply(&a.cloud).with_context(|| format!("reading {}", a.cloud.display()))?;
    let dataset = a.data.as_deref().map(load_dataset).transpose()?;
    let report = (cfg.iters / 10).max(1);
    let model = distill(&teacher, cloud, None, dataset.as_ref(), &cfg, &mut |r| {
        if r.iter % report == 0 {
            info!("iter {} error {:.3e}", r.iter, r.error);
        }
    })?;
    save_checkpoint(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let error = distillation_error(&model, &teacher, &cfg)?;
    println!("{}", serde_json::json!({ "distillation_error": error, "superpoints": model.superpoints()?.len() }));
    Ok(())
}
