//! Reverse-mode derivatives of the clamped compositing, projection and SH
//! color evaluation.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::forward::pack_tile;
use super::project::project_detail;
use super::sh::sh_basis;
use super::{GaussianView, RenderSettings, Rendered};
use crate::scene::{sigmoid, Camera};

/// Gradients with respect to the inputs of a [`GaussianView`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
    /// `P×3`, with respect to log-scales.
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    /// Norm of the gradient with respect to the NDC-space center, used by
    /// densification.
    pub mean2d_ndc: Vec<f64>,
}

impl GaussianGrads {
    pub fn zeros(count: usize, sh_stride: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); count],
            rotations: vec![Matrix3::zeros(); count],
            log_scales: vec![0.0; count * 3],
            opacity_logits: vec![0.0; count],
            sh: vec![0.0; count * sh_stride],
            mean2d_ndc: vec![0.0; count],
        }
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    opacity: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Back-propagate `grad_image` (same layout as the rendered image) to the
/// Gaussian parameters. Per-tile partial sums are reduced in tile order, so
/// the result does not depend on the number of worker threads.
pub fn render_backward(
    view: &GaussianView<'_>,
    cam: &Camera,
    background: &Vector3<f64>,
    settings: &RenderSettings,
    rendered: &Rendered,
    grad_image: &[f64],
) -> GaussianGrads {
    let width = cam.width;
    let height = cam.height;
    assert_eq!(grad_image.len(), width * height * 3, "gradient image size");
    let state = &rendered.forward;
    let projected = &rendered.projected;
    let tile = settings.tile_size;

    let partials: Vec<Vec<ScreenGrad>> = (0..state.tiles_x * state.tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % state.tiles_x, t / state.tiles_x);
            let list = pack_tile(projected, &state.tile_lists[t], settings.alpha_min);
            let mut acc = vec![ScreenGrad::default(); list.len()];
            if list.is_empty() {
                return acc;
            }
            for ly in 0..tile {
                let py = ty * tile + ly;
                if py >= height {
                    break;
                }
                for lx in 0..tile {
                    let px = tx * tile + lx;
                    if px >= width {
                        break;
                    }
                    let p = py * width + px;
                    let dpix = [grad_image[3 * p], grad_image[3 * p + 1], grad_image[3 * p + 2]];
                    if dpix == [0.0; 3] {
                        continue;
                    }
                    let t_final = state.final_transmittance[p];
                    let bg_dot = background.x * dpix[0] + background.y * dpix[1] + background.z * dpix[2];
                    let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
                    let mut trans = t_final;
                    let mut accum = [0.0; 3];
                    let mut last_alpha = 0.0;
                    let mut last_color = [0.0; 3];
                    for j in (0..state.last_contributor[p] as usize).rev() {
                        let g = &list[j];
                        let Some((alpha, raw, gauss, dx, dy)) = g.visible_alpha(cx, cy, settings) else {
                            continue;
                        };
                        trans /= 1.0 - alpha;
                        let weight = alpha * trans;
                        let mut d_alpha = 0.0;
                        let entry = &mut acc[j];
                        for c in 0..3 {
                            accum[c] = last_alpha * last_color[c] + (1.0 - last_alpha) * accum[c];
                            d_alpha += (g.color[c] - accum[c]) * dpix[c];
                            entry.color[c] += weight * dpix[c];
                        }
                        d_alpha *= trans;
                        last_alpha = alpha;
                        last_color = g.color;
                        d_alpha -= t_final / (1.0 - alpha) * bg_dot;
                        if raw > settings.alpha_max {
                            continue;
                        }
                        entry.opacity += gauss * d_alpha;
                        let d_power = g.opacity * d_alpha * gauss;
                        let [a, b, c] = g.conic();
                        entry.mean[0] += d_power * (a * dx + b * dy);
                        entry.mean[1] += d_power * (b * dx + c * dy);
                        entry.conic[0] += -0.5 * dx * dx * d_power;
                        entry.conic[1] += -dx * dy * d_power;
                        entry.conic[2] += -0.5 * dy * dy * d_power;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); projected.len()];
    for (t, part) in partials.iter().enumerate() {
        for (j, g) in part.iter().enumerate() {
            screen[state.tile_lists[t][j] as usize].add(g);
        }
    }

    let center = cam.center();
    let w_rot = cam.rotation();
    let per_gaussian: Vec<_> = projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(proj, sg)| chain_gaussian(view, cam, &center, &w_rot, settings, proj.source, sg))
        .collect();

    let stride = view.sh_stride();
    let mut out = GaussianGrads::zeros(view.len(), stride);
    for (proj, g) in projected.iter().zip(per_gaussian) {
        let i = proj.source;
        out.positions[i] = g.position;
        out.rotations[i] = g.rotation;
        out.log_scales[3 * i..3 * i + 3].copy_from_slice(g.log_scale.as_slice());
        out.opacity_logits[i] = g.opacity_logit;
        out.sh[i * stride..(i + 1) * stride].copy_from_slice(&g.sh);
        out.mean2d_ndc[i] = g.mean2d_ndc;
    }
    out
}

struct PerGaussian {
    position: Vector3<f64>,
    rotation: Matrix3<f64>,
    log_scale: Vector3<f64>,
    opacity_logit: f64,
    sh: Vec<f64>,
    mean2d_ndc: f64,
}

fn chain_gaussian(
    view: &GaussianView<'_>,
    cam: &Camera,
    center: &Vector3<f64>,
    w_rot: &Matrix3<f64>,
    settings: &RenderSettings,
    i: usize,
    sg: &ScreenGrad,
) -> PerGaussian {
    let mean = view.positions[i];
    let rot = view.rotations[i];
    let scale = view.scale(i);
    let cov = view.covariance(i);
    let detail = project_detail(&cov, &mean, cam, settings).expect("projected gaussian re-projects");

    // conic -> projected covariance
    let q = detail.conic;
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(q * g_conic * q);
    // projected covariance -> world covariance and the JW product
    let jw = detail.jw;
    let g_cov3d = jw.transpose() * g_cov2d * jw;
    let g_jw: Matrix2x3<f64> = 2.0 * g_cov2d * jw * cov;
    let g_j = g_jw * w_rot.transpose();

    let p = detail.p_cam;
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut g_p = Vector3::new(
        g_j[(0, 2)] * (-fx * iz2),
        g_j[(1, 2)] * (-fy * iz2),
        g_j[(0, 0)] * (-fx * iz2)
            + g_j[(0, 2)] * (2.0 * fx * x * iz3)
            + g_j[(1, 1)] * (-fy * iz2)
            + g_j[(1, 2)] * (2.0 * fy * y * iz3),
    );
    let gm = Vector2::new(sg.mean[0], sg.mean[1]);
    g_p.x += gm.x * fx * iz;
    g_p.y += gm.y * fy * iz;
    g_p.z += -gm.x * fx * x * iz2 - gm.y * fy * y * iz2;
    let mut g_mean = w_rot.transpose() * g_p;

    // covariance -> rotation and log-scale
    let s2 = Matrix3::from_diagonal(&scale.component_mul(&scale));
    let g_rot = 2.0 * g_cov3d * rot * s2;
    let inner = rot.transpose() * g_cov3d * rot;
    let g_log_scale = Vector3::new(
        2.0 * scale.x * scale.x * inner[(0, 0)],
        2.0 * scale.y * scale.y * inner[(1, 1)],
        2.0 * scale.z * scale.z * inner[(2, 2)],
    );

    // color -> SH coefficients and view direction
    let stride = view.sh_stride();
    let coeffs = view.coeffs(i);
    let v = mean - center;
    let dist = v.norm();
    let dir = v / dist;
    let (basis, basis_grad) = sh_basis(view.active_sh_degree, &dir);
    let n = (view.active_sh_degree + 1) * (view.active_sh_degree + 1);
    let mut g_sh = vec![0.0; stride];
    let mut g_dir = Vector3::zeros();
    for c in 0..3 {
        let raw: f64 = 0.5 + (0..n).map(|b| basis[b] * coeffs[b * 3 + c]).sum::<f64>();
        if raw < 0.0 {
            continue;
        }
        let gc = sg.color[c];
        for b in 0..n {
            g_sh[b * 3 + c] = basis[b] * gc;
            let h = coeffs[b * 3 + c] * gc;
            g_dir += Vector3::new(basis_grad[b][0], basis_grad[b][1], basis_grad[b][2]) * h;
        }
    }
    g_mean += (g_dir - dir * dir.dot(&g_dir)) / dist;

    let sigma = sigmoid(view.opacity_logits[i]);
    let ndc = Vector2::new(gm.x * 0.5 * cam.width as f64, gm.y * 0.5 * cam.height as f64);
    PerGaussian {
        position: g_mean,
        rotation: g_rot,
        log_scale: g_log_scale,
        opacity_logit: sg.opacity * sigma * (1.0 - sigma),
        sh: g_sh,
        mean2d_ndc: ndc.norm(),
    }
}
