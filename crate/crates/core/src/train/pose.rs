//! Per-superpoint pose estimation for new frames with everything else
//! frozen.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::adam::{exp_lr, Adam};
use super::objective::{evaluate, LossWeights, Stage};
use crate::error::{Error, Result};
use crate::geom::RigidTransform;
use crate::metrics::psnr;
use crate::model::{RenderPath, SpgsModel};
use crate::rasterizer::{render, RenderSettings};
use crate::scene::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    /// Adam iterations per frame.
    pub iters: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub dssim: f64,
    pub render: RenderSettings,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self { iters: 1000, lr_init: 5e-3, lr_final: 5e-5, dssim: 0.2, render: RenderSettings::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseEstimate {
    pub name: String,
    pub time: f64,
    pub transforms: Vec<RigidTransform>,
    pub psnr: f64,
}

/// Superpoint transforms at the model's last training timestep.
pub fn initial_transforms(model: &SpgsModel) -> Result<Vec<RigidTransform>> {
    let t = *model.train_times.last().ok_or(Error::TooFewTimesteps)?;
    let path = if model.cache.is_some() { RenderPath::Interp } else { RenderPath::Network };
    model.superpoint_transforms(t, path)
}

/// Fit one set of superpoint transforms per frame, in order, each starting
/// from the previous frame's solution (the first from `init`).
pub fn estimate_pose(
    model: &SpgsModel,
    frames: &[Frame],
    background: &Vector3<f64>,
    init: Vec<RigidTransform>,
    config: &PoseConfig,
    observer: &mut dyn FnMut(&PoseEstimate),
) -> Result<Vec<PoseEstimate>> {
    let m = model.superpoints()?.len();
    if init.len() != m {
        return Err(Error::ShapeMismatch(format!("{} initial transforms for {m} superpoints", init.len())));
    }
    let weights = LossWeights { dssim: config.dssim, ..LossWeights::default() }.image_only();
    let mut params: Vec<f64> = init.iter().flat_map(RigidTransform::to_array).collect();
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let target = frame.image.as_ref().ok_or_else(|| Error::Dataset(format!("frame {} has no image", frame.name)))?;
        let mut adam = Adam::new(params.len());
        for iter in 0..config.iters {
            let transforms: Vec<RigidTransform> = params.chunks_exact(6).map(RigidTransform::from_slice).collect();
            let ev = evaluate(
                model,
                &frame.camera,
                frame.time,
                target,
                background,
                &config.render,
                &weights,
                Stage::Deformed,
                Some(&transforms),
            )?;
            let lr = exp_lr(config.lr_init, config.lr_final, iter as f64 / config.iters as f64);
            adam.step(&mut params, &ev.grads.transforms, lr);
        }
        let transforms: Vec<RigidTransform> = params.chunks_exact(6).map(RigidTransform::from_slice).collect();
        let (pos, rot) = model.deformed_with(&transforms, frame.time)?;
        let rendered = render(&model.view(&pos, &rot), &frame.camera, background, &config.render);
        let estimate = PoseEstimate {
            name: frame.name.clone(),
            time: frame.time,
            psnr: psnr(&rendered.output.image, target)?,
            transforms,
        };
        observer(&estimate);
        out.push(estimate);
    }
    Ok(out)
}
