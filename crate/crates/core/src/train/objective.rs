//! Per-frame training objective and its full reverse-mode gradient.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deform::NetTape;
use crate::error::{Error, Result};
use crate::geom::{quat_to_rotmat_backward, so3_exp, so3_exp_backward, RigidTransform};
use crate::image::Image;
use crate::metrics::image_loss;
use crate::model::SpgsModel;
use crate::rasterizer::{render, render_backward, GaussianGrads, RenderSettings, Rendered};
use crate::scene::Camera;
use crate::superpoint::{property_loss_with_grad, softmax_backward};

/// Weights of the image and property terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub dssim: f64,
    pub position: f64,
    pub rotation: f64,
    pub translation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dssim: 0.2, position: 1e-3, rotation: 1.0, translation: 1.0 }
    }
}

impl LossWeights {
    pub fn image_only(&self) -> Self {
        Self { position: 0.0, rotation: 0.0, translation: 0.0, ..*self }
    }
}

/// Which parts of the model take part in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Render the canonical cloud, no deformation.
    Canonical,
    /// Superpoint deformation (and the residual network when present).
    Deformed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub image: f64,
    pub position: f64,
    pub rotation: f64,
    pub translation: f64,
}

/// Gradients of the objective with respect to every trainable tensor.
#[derive(Clone, Debug, Default)]
pub struct ModelGrads {
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    /// With respect to the raw (unnormalized) quaternions.
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub logits: Vec<f64>,
    pub deform: Vec<f64>,
    pub nonrigid: Vec<f64>,
    /// `M×6` gradient with respect to the superpoint transforms `(ω, t)`.
    pub transforms: Vec<f64>,
    pub mean2d_ndc: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Forward state of the deformation chain.
pub struct DeformState {
    canonical_pos: Vec<Vector3<f64>>,
    canonical_rot: Vec<Matrix3<f64>>,
    assignment: Vec<u32>,
    transforms: Vec<RigidTransform>,
    sp_rot: Vec<Matrix3<f64>>,
    rigid_pos: Vec<Vector3<f64>>,
    rigid_rot: Vec<Matrix3<f64>>,
    residual: Option<(Vec<RigidTransform>, Vec<Matrix3<f64>>, NetTape)>,
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
}

/// Move Gaussians by `transforms` (one per superpoint) and the residual
/// network, keeping intermediates for [`deform_backward`].
pub fn deform_forward(model: &SpgsModel, transforms: Vec<RigidTransform>, t: f64) -> Result<DeformState> {
    let (canonical_pos, canonical_rot) = model.canonical()?;
    let assignment = model.assignment()?;
    let sp_rot: Vec<Matrix3<f64>> = transforms.iter().map(|x| so3_exp(&x.rotation.0)).collect();
    let mut rigid_pos = Vec::with_capacity(canonical_pos.len());
    let mut rigid_rot = Vec::with_capacity(canonical_pos.len());
    for ((p, r), &j) in canonical_pos.iter().zip(&canonical_rot).zip(&assignment) {
        let j = j as usize;
        rigid_pos.push(sp_rot[j] * p + transforms[j].translation);
        rigid_rot.push(sp_rot[j] * r);
    }
    let (positions, rotations, residual) = match &model.nonrigid {
        Some(g) => {
            let (out, tape) = g.forward(&rigid_pos, t);
            let res = crate::deform::outputs_to_transforms(&out);
            let mats: Vec<Matrix3<f64>> = res.iter().map(|x| so3_exp(&x.rotation.0)).collect();
            let pos = rigid_pos.iter().zip(&res).zip(&mats).map(|((p, x), m)| m * p + x.translation).collect();
            let rot = rigid_rot.iter().zip(&mats).map(|(r, m)| m * r).collect();
            (pos, rot, Some((res, mats, tape)))
        }
        None => (rigid_pos.clone(), rigid_rot.clone(), None),
    };
    Ok(DeformState {
        canonical_pos,
        canonical_rot,
        assignment,
        transforms,
        sp_rot,
        rigid_pos,
        rigid_rot,
        residual,
        positions,
        rotations,
    })
}

/// Gradients of the deformation chain.
pub struct DeformGrads {
    pub canonical_pos: Vec<Vector3<f64>>,
    pub canonical_rot: Vec<Matrix3<f64>>,
    /// `M×6` in `(ω, t)` order.
    pub transforms: Vec<f64>,
    pub nonrigid: Vec<f64>,
}

/// Pull gradients on the deformed centers and rotation matrices back to
/// the canonical cloud, the superpoint transforms and the residual network.
/// `extra_transform_grad` (`M×6`) is added before the rotation-vector chain.
pub fn deform_backward(
    model: &SpgsModel,
    state: &DeformState,
    g_pos: &[Vector3<f64>],
    g_rot: &[Matrix3<f64>],
    extra_transform_grad: Option<&[f64]>,
) -> DeformGrads {
    let p = state.canonical_pos.len();
    let (g_rpos, g_rrot, nonrigid) = match (&state.residual, &model.nonrigid) {
        (Some((res, mats, tape)), Some(g)) => {
            let mut out_grad = Array2::zeros((p, 6));
            let mut g_rpos = Vec::with_capacity(p);
            let mut g_rrot = Vec::with_capacity(p);
            for i in 0..p {
                let m = &mats[i];
                g_rpos.push(m.transpose() * g_pos[i]);
                g_rrot.push(m.transpose() * g_rot[i]);
                let g_m = g_pos[i] * state.rigid_pos[i].transpose() + g_rot[i] * state.rigid_rot[i].transpose();
                let g_w = so3_exp_backward(&res[i].rotation.0, &g_m);
                for c in 0..3 {
                    out_grad[[i, c]] = g_w[c];
                    out_grad[[i, 3 + c]] = g_pos[i][c];
                }
            }
            let (g_params, g_points) = g.backward(tape, &out_grad);
            for (a, b) in g_rpos.iter_mut().zip(g_points) {
                *a += b;
            }
            (g_rpos, g_rrot, g_params)
        }
        _ => (g_pos.to_vec(), g_rot.to_vec(), Vec::new()),
    };

    let m = state.transforms.len();
    let mut g_sp_rot = vec![Matrix3::zeros(); m];
    let mut g_sp_t = vec![Vector3::zeros(); m];
    let mut canonical_pos = Vec::with_capacity(p);
    let mut canonical_rot = Vec::with_capacity(p);
    for i in 0..p {
        let j = state.assignment[i] as usize;
        let r = &state.sp_rot[j];
        canonical_pos.push(r.transpose() * g_rpos[i]);
        canonical_rot.push(r.transpose() * g_rrot[i]);
        g_sp_rot[j] += g_rpos[i] * state.canonical_pos[i].transpose() + g_rrot[i] * state.canonical_rot[i].transpose();
        g_sp_t[j] += g_rpos[i];
    }
    let mut transforms = vec![0.0; m * 6];
    for j in 0..m {
        let mut gw = Vector3::zeros();
        if let Some(extra) = extra_transform_grad {
            gw = Vector3::new(extra[j * 6], extra[j * 6 + 1], extra[j * 6 + 2]);
            for c in 0..3 {
                transforms[j * 6 + 3 + c] = extra[j * 6 + 3 + c];
            }
        }
        gw += so3_exp_backward(&state.transforms[j].rotation.0, &g_sp_rot[j]);
        for c in 0..3 {
            transforms[j * 6 + c] = gw[c];
            transforms[j * 6 + 3 + c] += g_sp_t[j][c];
        }
    }
    DeformGrads { canonical_pos, canonical_rot, transforms, nonrigid }
}

/// Result of one objective evaluation.
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grads: ModelGrads,
    pub rendered: Rendered,
}

fn gaussian_grads(model: &SpgsModel, g: &GaussianGrads, g_pos: &[Vector3<f64>], g_rot: &[Matrix3<f64>]) -> Result<ModelGrads> {
    let mut rotations = Vec::with_capacity(model.cloud.len() * 4);
    for (i, gr) in g_rot.iter().enumerate() {
        rotations.extend(quat_to_rotmat_backward(model.cloud.rotation(i), gr)?);
    }
    Ok(ModelGrads {
        positions: g_pos.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
        log_scales: g.log_scales.clone(),
        rotations,
        opacity_logits: g.opacity_logits.clone(),
        sh: g.sh.clone(),
        mean2d_ndc: g.mean2d_ndc.clone(),
        ..ModelGrads::default()
    })
}

/// Image loss of `model` rendered for `cam` at `t` against `target`, plus
/// (in the deformed stage) the weighted property reconstruction terms, with
/// gradients for every trainable tensor.
///
/// In the deformed stage the superpoint transforms come from `transforms`
/// when given, otherwise from the deformation network. Canonical superpoint
/// positions are treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &SpgsModel,
    cam: &Camera,
    t: f64,
    target: &Image,
    background: &Vector3<f64>,
    settings: &RenderSettings,
    weights: &LossWeights,
    stage: Stage,
    transforms: Option<&[RigidTransform]>,
) -> Result<Evaluation> {
    if target.width != cam.width || target.height != cam.height {
        return Err(Error::ShapeMismatch("target image does not match camera".into()));
    }
    match stage {
        Stage::Canonical => {
            let (pos, rot) = model.canonical()?;
            let view = model.view(&pos, &rot);
            let rendered = render(&view, cam, background, settings);
            let (image, grad_image) = image_loss(&rendered.output.image, target, weights.dssim)?;
            let g = render_backward(&view, cam, background, settings, &rendered, &grad_image);
            let mut grads = gaussian_grads(model, &g, &g.positions, &g.rotations)?;
            grads.radii = rendered.radii(model.cloud.len());
            let loss = LossBreakdown { total: image, image, ..LossBreakdown::default() };
            Ok(Evaluation { loss, grads, rendered })
        }
        Stage::Deformed => {
            let sp = model.superpoints()?;
            let (sp_transforms, net_tape) = match transforms {
                Some(x) => (x.to_vec(), None),
                None => {
                    let net = model.deform.as_ref().ok_or_else(|| Error::Model("model has no deformation network".into()))?;
                    let (out, tape) = net.forward(&sp.positions, t);
                    (crate::deform::outputs_to_transforms(&out), Some(tape))
                }
            };
            let state = deform_forward(model, sp_transforms, t)?;
            let view = model.view(&state.positions, &state.rotations);
            let rendered = render(&view, cam, background, settings);
            let (image, grad_image) = image_loss(&rendered.output.image, target, weights.dssim)?;
            let g = render_backward(&view, cam, background, settings, &rendered, &grad_image);
            let mut g_pos = g.positions.clone();
            let mut loss = LossBreakdown { image, ..LossBreakdown::default() };

            let (p, k, m) = (model.cloud.len(), sp.k, sp.len());
            let probs = sp.probabilities();
            let mut g_probs = vec![0.0; p * k];
            let mut extra = vec![0.0; m * 6];
            if weights.position != 0.0 {
                let v: Vec<f64> = state.positions.iter().flat_map(|x| [x.x, x.y, x.z]).collect();
                let pl = property_loss_with_grad(&probs, &sp.neighbors, k, m, &v, 3);
                loss.position = pl.loss;
                for i in 0..p {
                    for c in 0..3 {
                        g_pos[i][c] += weights.position * pl.grad_values[i * 3 + c];
                    }
                }
                for (a, b) in g_probs.iter_mut().zip(&pl.grad_probs) {
                    *a += weights.position * b;
                }
            }
            for (weight, offset, slot) in [(weights.rotation, 0, &mut loss.rotation), (weights.translation, 3, &mut loss.translation)] {
                if weight == 0.0 {
                    continue;
                }
                let v: Vec<f64> = state
                    .assignment
                    .iter()
                    .flat_map(|&j| {
                        let x = state.transforms[j as usize].to_array();
                        [x[offset], x[offset + 1], x[offset + 2]]
                    })
                    .collect();
                let pl = property_loss_with_grad(&probs, &sp.neighbors, k, m, &v, 3);
                *slot = pl.loss;
                for (i, &j) in state.assignment.iter().enumerate() {
                    for c in 0..3 {
                        extra[j as usize * 6 + offset + c] += weight * pl.grad_values[i * 3 + c];
                    }
                }
                for (a, b) in g_probs.iter_mut().zip(&pl.grad_probs) {
                    *a += weight * b;
                }
            }
            loss.total = loss.image
                + weights.position * loss.position
                + weights.rotation * loss.rotation
                + weights.translation * loss.translation;

            let dg = deform_backward(model, &state, &g_pos, &g.rotations, Some(&extra));
            let mut grads = gaussian_grads(model, &g, &dg.canonical_pos, &dg.canonical_rot)?;
            grads.logits = softmax_backward(&probs, &g_probs, k);
            grads.nonrigid = dg.nonrigid;
            if let (Some(tape), Some(net)) = (net_tape, model.deform.as_ref()) {
                let out_grad = Array2::from_shape_vec((m, 6), dg.transforms.clone()).expect("M×6");
                grads.deform = net.backward(&tape, &out_grad).0;
            }
            grads.transforms = dg.transforms;
            grads.radii = rendered.radii(p);
            Ok(Evaluation { loss, grads, rendered })
        }
    }
}
