//! EWA projection of 3D Gaussians to screen-space conics.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::RenderSettings;
use crate::scene::Camera;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    /// Pixel-space center; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub mean: Vector2<f64>,
    /// Upper triangle `(a, b, c)` of the inverse projected covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub radius: f64,
    pub color: [f64; 3],
    /// Activated opacity.
    pub opacity: f64,
    /// World-space center; secondary sort key after depth.
    pub key: Vector3<f64>,
    /// Index of the source Gaussian.
    pub source: usize,
}

/// Intermediate quantities of the projection, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ProjectionDetail {
    pub p_cam: Vector3<f64>,
    pub jw: Matrix2x3<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub mean: Vector2<f64>,
    pub radius: f64,
}

/// Perspective Jacobian of the pinhole projection at camera-space point `p`.
pub(crate) fn perspective_jacobian(p: &Vector3<f64>, cam: &Camera) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * x * iz2, 0.0, cam.fy * iz, -cam.fy * y * iz2)
}

pub(crate) fn project_detail(
    cov: &Matrix3<f64>,
    mean: &Vector3<f64>,
    cam: &Camera,
    settings: &RenderSettings,
) -> Option<ProjectionDetail> {
    let w = cam.rotation();
    let p_cam = w * mean + cam.translation();
    if p_cam.z <= cam.near {
        return None;
    }
    let jw = perspective_jacobian(&p_cam, cam) * w;
    let cov2d = jw * cov * jw.transpose() + Matrix2::identity() * settings.dilation;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !(det > 0.0) {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = settings.radius_sigma * lambda_max.sqrt();
    let iz = 1.0 / p_cam.z;
    let mean2d = Vector2::new(cam.fx * p_cam.x * iz + cam.cx, cam.fy * p_cam.y * iz + cam.cy);
    Some(ProjectionDetail { p_cam, jw, cov2d, conic, mean: mean2d, radius })
}

/// Project a Gaussian with world covariance `cov` and center `mean`.
///
/// Returns `None` when the center lies on or in front of the near plane.
/// Color is left at zero and opacity at one; callers fill them in.
pub fn project_gaussian(
    cov: &Matrix3<f64>,
    mean: &Vector3<f64>,
    cam: &Camera,
    settings: &RenderSettings,
) -> Option<Projected2D> {
    let d = project_detail(cov, mean, cam, settings)?;
    Some(Projected2D {
        mean: d.mean,
        conic: [d.conic[(0, 0)], d.conic[(0, 1)], d.conic[(1, 1)]],
        depth: d.p_cam.z,
        radius: d.radius,
        color: [0.0; 3],
        opacity: 1.0,
        key: *mean,
        source: 0,
    })
}

/// Projected 2D covariance, including the low-pass dilation.
pub fn projected_covariance(
    cov: &Matrix3<f64>,
    mean: &Vector3<f64>,
    cam: &Camera,
    settings: &RenderSettings,
) -> Option<Matrix2<f64>> {
    project_detail(cov, mean, cam, settings).map(|d| d.cov2d)
}
