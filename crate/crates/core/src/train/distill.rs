//! Distilling a teacher's per-Gaussian trajectories into superpoint motion.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::{exp_lr, Adam};
use super::config::TrainConfig;
use super::objective::{deform_backward, deform_forward, evaluate, DeformState, Stage};
use super::trainer::{supervised_frames, FrameSampler};
use crate::deform::{outputs_to_transforms, DeformNet, NetConfig};
use crate::error::{Error, Result};
use crate::geom::{hat, so3_left_jacobian_inverse, so3_log};
use crate::io::Trajectories;
use crate::model::SpgsModel;
use crate::scene::{Dataset, GaussianCloud};
use crate::superpoint::SuperpointModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub iters: usize,
    /// Weight of the center term.
    pub position_weight: f64,
    /// Weight of the axis-angle orientation term.
    pub rotation_weight: f64,
    /// Also learn a per-Gaussian residual network.
    pub nonrigid: bool,
    /// Superpoint count, neighborhood size, network shape, learning rates
    /// and the rendering loss when a dataset is given.
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { iters: 5000, position_weight: 1.0, rotation_weight: 1.0, nonrigid: false, train: TrainConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DistillRecord {
    pub iter: usize,
    /// Weighted trajectory error at the sampled timestep.
    pub error: f64,
    pub position: f64,
    pub rotation: f64,
    /// Rendering objective when a dataset supervises the run.
    pub image: Option<f64>,
}

/// Teacher targets at one timestep.
struct Targets {
    positions: Vec<Vector3<f64>>,
    rotations: Vec<Matrix3<f64>>,
}

fn targets(teacher: &Trajectories) -> Result<Vec<Targets>> {
    teacher
        .positions
        .iter()
        .zip(&teacher.rotations)
        .map(|(pos, rot)| {
            let rotations = rot.iter().map(|q| q.to_rotmat()).collect::<Result<Vec<_>>>()?;
            Ok(Targets { positions: pos.clone(), rotations })
        })
        .collect()
}

/// Per-term mean squared errors and gradients with respect to the deformed
/// centers and rotation matrices. The orientation error is the rotation
/// vector of `R_student R_teacherᵀ`.
fn trajectory_loss(
    state: &DeformState,
    target: &Targets,
    config: &DistillConfig,
) -> Result<(f64, f64, Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    let p = state.positions.len();
    let inv = 1.0 / p as f64;
    let (mut lp, mut lr) = (0.0, 0.0);
    let mut g_pos = Vec::with_capacity(p);
    let mut g_rot = Vec::with_capacity(p);
    for i in 0..p {
        let dp = state.positions[i] - target.positions[i];
        lp += dp.norm_squared() * inv;
        g_pos.push(dp * (2.0 * inv * config.position_weight));

        let dr = so3_log(&(state.rotations[i] * target.rotations[i].transpose()))?;
        lr += dr.norm_squared() * inv;
        // Tangent gradient under a left perturbation, lifted to a matrix.
        let g = so3_left_jacobian_inverse(&dr).transpose() * dr * (2.0 * inv * config.rotation_weight);
        g_rot.push(0.5 * hat(&g) * state.rotations[i]);
    }
    Ok((lp, lr, g_pos, g_rot))
}

fn check_teacher(teacher: &Trajectories, count: usize) -> Result<()> {
    teacher.validate()?;
    if teacher.times.len() < 2 {
        return Err(Error::TooFewTimesteps);
    }
    if teacher.gaussians() != count {
        return Err(Error::ShapeMismatch(format!(
            "trajectories cover {} Gaussians, cloud has {count}",
            teacher.gaussians()
        )));
    }
    Ok(())
}

/// Weighted trajectory error of `model` (network path) averaged over every
/// teacher timestep.
pub fn distillation_error(model: &SpgsModel, teacher: &Trajectories, config: &DistillConfig) -> Result<f64> {
    check_teacher(teacher, model.cloud.len())?;
    let net = model.deform.as_ref().ok_or_else(|| Error::Model("model has no deformation network".into()))?;
    let all = targets(teacher)?;
    let mut sum = 0.0;
    for (&t, target) in teacher.times.iter().zip(&all) {
        let transforms = net.predict(&model.superpoints()?.positions, t);
        let state = deform_forward(model, transforms, t)?;
        let (lp, lr, ..) = trajectory_loss(&state, target, config)?;
        sum += config.position_weight * lp + config.rotation_weight * lr;
    }
    Ok(sum / teacher.times.len() as f64)
}

/// Build a student whose canonical cloud is `canonical` and fit its
/// association, superpoint network and (optionally) residual network to
/// the teacher's trajectories. `superpoints` replaces the default FPS
/// initialization; `dataset` adds the rendering objective.
pub fn distill(
    teacher: &Trajectories,
    canonical: GaussianCloud,
    superpoints: Option<SuperpointModel>,
    dataset: Option<&Dataset>,
    config: &DistillConfig,
    observer: &mut dyn FnMut(&DistillRecord),
) -> Result<SpgsModel> {
    canonical.validate()?;
    check_teacher(teacher, canonical.len())?;
    let tc = &config.train;
    tc.validate()?;
    let all = targets(teacher)?;
    let frames = dataset.map(supervised_frames).transpose()?;
    let times = dataset.map_or_else(|| teacher.times.clone(), |d| d.train_times.clone());

    let mut model = SpgsModel::from_cloud(canonical, times);
    let (pos, _) = model.canonical()?;
    let sp = match superpoints {
        Some(sp) => {
            sp.validate()?;
            if sp.num_gaussians() != pos.len() {
                return Err(Error::ShapeMismatch("superpoint association rows vs cloud".into()));
            }
            sp
        }
        None => {
            let m = tc.superpoints.min(pos.len());
            SuperpointModel::initialize(&pos, m, tc.knn.min(m))?
        }
    };
    model.superpoints = Some(sp);
    model.superpoints.as_mut().expect("just set").update_canonical_positions(&pos);
    model.deform = Some(DeformNet::new(tc.deform_net, tc.seed ^ 0x5350_4753));
    if config.nonrigid {
        model.nonrigid = Some(DeformNet::new(NetConfig::nonrigid(), tc.seed ^ 0x4e47));
    }

    let mut deform_opt = Adam::new(model.deform.as_ref().map_or(0, |n| n.mlp.params.len()));
    let mut nonrigid_opt = Adam::new(model.nonrigid.as_ref().map_or(0, |n| n.mlp.params.len()));
    let mut logit_opt = Adam::new(model.superpoints()?.logits.len());
    let mut time_sampler = FrameSampler::new(teacher.times.len(), tc.seed);
    let mut frame_sampler = FrameSampler::new(frames.as_ref().map_or(1, Vec::len), tc.seed ^ 1);

    for iter in 0..config.iters {
        let progress = iter as f64 / config.iters.max(1) as f64;
        let k = time_sampler.next_index();
        let t = teacher.times[k];
        let net = model.deform.as_ref().expect("student network");
        let sp_pos = model.superpoints()?.positions.clone();
        let (out, tape) = net.forward(&sp_pos, t);
        let state = deform_forward(&model, outputs_to_transforms(&out), t)?;
        let (lp, lr, g_pos, g_rot) = trajectory_loss(&state, &all[k], config)?;
        let dg = deform_backward(&model, &state, &g_pos, &g_rot, None);
        let m = sp_pos.len();
        let out_grad = Array2::from_shape_vec((m, 6), dg.transforms).expect("M×6");
        let mut g_deform = net.backward(&tape, &out_grad).0;
        let mut g_nonrigid = dg.nonrigid;
        let mut g_logits = Vec::new();

        let mut record = DistillRecord {
            iter,
            error: config.position_weight * lp + config.rotation_weight * lr,
            position: lp,
            rotation: lr,
            image: None,
        };
        if let (Some(frames), Some(d)) = (&frames, dataset) {
            let (frame, image) = frames[frame_sampler.next_index()];
            let ev = evaluate(&model, &frame.camera, frame.time, image, &d.background, &tc.render, &tc.weights, Stage::Deformed, None)?;
            record.image = Some(ev.loss.total);
            for (a, b) in g_deform.iter_mut().zip(&ev.grads.deform) {
                *a += b;
            }
            for (a, b) in g_nonrigid.iter_mut().zip(&ev.grads.nonrigid) {
                *a += b;
            }
            g_logits = ev.grads.logits;
        }

        let lr_net = exp_lr(tc.deform_lr_init, tc.deform_lr_final, progress);
        if let Some(net) = &mut model.deform {
            deform_opt.step(&mut net.mlp.params, &g_deform, lr_net);
        }
        if let Some(net) = &mut model.nonrigid {
            nonrigid_opt.step(&mut net.mlp.params, &g_nonrigid, lr_net);
        }
        if !g_logits.is_empty() {
            let sp = model.superpoints.as_mut().expect("student superpoints");
            logit_opt.step(&mut sp.logits, &g_logits, tc.logit_lr);
            sp.update_canonical_positions(&pos);
        }
        observer(&record);
    }
    model.build_cache()?;
    Ok(model)
}
