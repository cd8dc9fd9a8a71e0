//! Differentiable Gaussian rasterization: EWA projection, depth sort, tile
//! binning, alpha compositing, the analytic backward pass, and a brute-force
//! reference compositor.

mod backward;
mod forward;
mod project;
mod reference;
pub mod sh;

pub use backward::{render_backward, GaussianGrads};
pub use forward::{rasterize, sort_by_depth, ForwardState, RenderOutput};
pub use project::{project_gaussian, projected_covariance, Projected2D};
pub use reference::rasterize_reference;
pub use sh::compute_sh_color;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{covariance_from_rotmat, sigmoid, Camera, GaussianCloud};
use crate::error::Result;

/// Compositing thresholds. Defaults follow the 3D-GS reference rasterizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Footprint radius in standard deviations of the projected Gaussian.
    pub radius_sigma: f64,
    /// Contributions with alpha below this are skipped.
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Blending stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Added to the diagonal of every projected covariance (px²).
    pub dilation: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            radius_sigma: 3.0,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
            dilation: 0.3,
        }
    }
}

impl RenderSettings {
    /// Alpha floor and early termination off, footprint wide enough that
    /// skipped contributions are below 1e-13. The blend is then the
    /// mathematically exact one.
    pub fn exact() -> Self {
        Self { radius_sigma: 8.0, alpha_min: 0.0, min_transmittance: 0.0, ..Self::default() }
    }
}

/// Borrowed, possibly deformed, Gaussians ready for rendering.
#[derive(Clone, Copy, Debug)]
pub struct GaussianView<'a> {
    pub positions: &'a [Vector3<f64>],
    pub rotations: &'a [Matrix3<f64>],
    pub log_scales: &'a [f64],
    pub opacity_logits: &'a [f64],
    pub sh: &'a [f64],
    /// Degree the SH array is laid out for.
    pub sh_degree: usize,
    /// Degree used when evaluating colors (≤ `sh_degree`).
    pub active_sh_degree: usize,
}

impl<'a> GaussianView<'a> {
    pub fn new(
        cloud: &'a GaussianCloud,
        positions: &'a [Vector3<f64>],
        rotations: &'a [Matrix3<f64>],
    ) -> Self {
        Self {
            positions,
            rotations,
            log_scales: &cloud.log_scales,
            opacity_logits: &cloud.opacity_logits,
            sh: &cloud.sh,
            sh_degree: cloud.sh_degree,
            active_sh_degree: cloud.sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub(crate) fn sh_stride(&self) -> usize {
        crate::scene::sh_basis_count(self.sh_degree) * 3
    }

    pub(crate) fn scale(&self, i: usize) -> Vector3<f64> {
        Vector3::new(
            self.log_scales[3 * i].exp(),
            self.log_scales[3 * i + 1].exp(),
            self.log_scales[3 * i + 2].exp(),
        )
    }

    pub(crate) fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance_from_rotmat(&self.scale(i), &self.rotations[i])
    }

    pub(crate) fn coeffs(&self, i: usize) -> &'a [f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }
}

/// Canonical positions and rotation matrices of a cloud.
pub fn canonical_buffers(cloud: &GaussianCloud) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
    let positions = (0..cloud.len()).map(|i| cloud.position(i)).collect();
    Ok((positions, cloud.rotation_matrices()?))
}

/// Forward render result with everything needed for the backward pass.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub output: RenderOutput,
    pub projected: Vec<Projected2D>,
    pub forward: ForwardState,
}

impl Rendered {
    /// Screen-space radius per source Gaussian (0 when culled).
    pub fn radii(&self, count: usize) -> Vec<f64> {
        let mut r = vec![0.0; count];
        for p in &self.projected {
            r[p.source] = p.radius;
        }
        r
    }
}

/// Project and color every Gaussian of `view` for `cam`.
pub fn project_all(view: &GaussianView<'_>, cam: &Camera, settings: &RenderSettings) -> Vec<Projected2D> {
    let center = cam.center();
    (0..view.len())
        .into_par_iter()
        .filter_map(|i| {
            let mean = view.positions[i];
            let cov = view.covariance(i);
            let mut p = project_gaussian(&cov, &mean, cam, settings)?;
            let dir = (mean - center).normalize();
            p.color = compute_sh_color(view.coeffs(i), view.active_sh_degree, &dir);
            p.opacity = sigmoid(view.opacity_logits[i]);
            p.key = mean;
            p.source = i;
            Some(p)
        })
        .collect()
}

/// Full differentiable forward render.
pub fn render(
    view: &GaussianView<'_>,
    cam: &Camera,
    background: &Vector3<f64>,
    settings: &RenderSettings,
) -> Rendered {
    let projected = project_all(view, cam, settings);
    let (output, forward) = rasterize(&projected, cam.width, cam.height, background, settings);
    Rendered { output, projected, forward }
}
