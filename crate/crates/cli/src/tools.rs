use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use log::info;
use nalgebra::Vector3;
use serde::Serialize;
use spgs::io::save_ply;
use spgs::io::toy::{generate_toy_scene, write_toy_scene, MotionKind, ToySpec};
use spgs::model::SpgsModel;
use spgs::rasterizer::sh::rgb_to_sh_dc;
use spgs::scene::GaussianCloud;

use crate::{load_checkpoint, GlobalArgs};

#[derive(Args, Debug)]
pub struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    per_cluster: Option<usize>,
    /// translate, rotate, hinge or translate-rotate.
    #[arg(long)]
    motion: Option<MotionKind>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    test_cameras: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Largest translation over the sequence.
    #[arg(long)]
    translation: Option<f64>,
    /// Largest rotation over the sequence, in degrees.
    #[arg(long)]
    rotation_deg: Option<f64>,
}

pub fn run_gen_toy(g: &GlobalArgs, a: GenToyArgs) -> Result<()> {
    let mut spec = ToySpec::default();
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.clusters, a.clusters);
    set(&mut spec.per_cluster, a.per_cluster);
    set(&mut spec.timesteps, a.timesteps);
    set(&mut spec.cameras, a.cameras);
    set(&mut spec.test_cameras, a.test_cameras);
    set(&mut spec.width, a.width);
    set(&mut spec.height, a.height);
    if let Some(m) = a.motion {
        spec.motion = m;
    }
    if let Some(t) = a.translation {
        spec.translation = t;
    }
    if let Some(r) = a.rotation_deg {
        spec.rotation = r.to_radians();
    }
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let scene = generate_toy_scene(&spec)?;
    write_toy_scene(&scene, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    info!("{} train and {} test frames in {}", scene.dataset.train.len(), scene.dataset.test.len(), a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// PLY with every Gaussian tinted by its superpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, PartialEq, Serialize)]
pub struct InspectSummary {
    pub gaussians: usize,
    pub superpoints: usize,
    /// Superpoints that are some Gaussian's hard assignment.
    pub occupied: usize,
    pub sh_degree: usize,
    pub train_times: usize,
    pub nonrigid: bool,
    pub cache: bool,
}

/// Distinct, reproducible color of superpoint `j` (golden-ratio hue walk).
pub fn superpoint_color(j: usize) -> Vector3<f64> {
    let h = (j as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let (s, v) = (0.75, 0.95);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    Vector3::new(r, g, b).add_scalar(v - c)
}

/// The canonical cloud with view-independent color taken from each
/// Gaussian's hard-assigned superpoint.
pub fn colored_by_superpoint(model: &SpgsModel) -> Result<GaussianCloud> {
    let assignment = model.assignment()?;
    let mut cloud = model.cloud.clone();
    let stride = cloud.sh_stride();
    for (i, &j) in assignment.iter().enumerate() {
        let row = &mut cloud.sh[i * stride..(i + 1) * stride];
        row.fill(0.0);
        let c = superpoint_color(j as usize);
        for k in 0..3 {
            row[k] = rgb_to_sh_dc(c[k]);
        }
    }
    Ok(cloud)
}

pub fn summarize(model: &SpgsModel) -> Result<InspectSummary> {
    let sp = model.superpoints()?;
    Ok(InspectSummary {
        gaussians: model.cloud.len(),
        superpoints: sp.len(),
        occupied: sp.occupied().iter().filter(|&&o| o).count(),
        sh_degree: model.cloud.sh_degree,
        train_times: model.train_times.len(),
        nonrigid: model.nonrigid.is_some(),
        cache: model.cache.is_some(),
    })
}

pub fn run_inspect(_g: &GlobalArgs, a: InspectArgs) -> Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let cloud = colored_by_superpoint(&model)?;
    save_ply(&cloud, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", serde_json::to_string_pretty(&summarize(&model)?)?);
    Ok(())
}
