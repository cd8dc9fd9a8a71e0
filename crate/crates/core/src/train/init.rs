//! Initial Gaussian clouds.

use nalgebra::Vector3;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Quat;
use crate::rasterizer::sh::rgb_to_sh_dc;
use crate::scene::{logit, sh_basis_count, GaussianCloud};

pub const INITIAL_OPACITY: f64 = 0.1;

/// Mean squared distance to the three nearest other points (brute force).
pub fn mean_sq_dist_3nn(points: &[Vector3<f64>]) -> Vec<f64> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.iter().copied().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                1.0
            } else {
                found.iter().sum::<f64>() / found.len() as f64
            }
        })
        .collect()
}

/// Isotropic Gaussians at `points` with the given colors, sized by the
/// local point spacing, opacity 0.1 and higher-order SH zeroed.
pub fn cloud_from_points(points: &[Vector3<f64>], colors: &[Vector3<f64>], sh_degree: usize) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch("one color per point".into()));
    }
    let stride = sh_basis_count(sh_degree) * 3;
    let d2 = mean_sq_dist_3nn(points);
    let mut cloud = GaussianCloud::with_capacity(points.len(), sh_degree);
    let mut sh = vec![0.0; stride];
    for ((p, c), d) in points.iter().zip(colors).zip(d2) {
        for k in 0..3 {
            sh[k] = rgb_to_sh_dc(c[k]);
        }
        let log_scale = 0.5 * d.max(1e-7).ln();
        cloud.push(*p, Vector3::repeat(log_scale), Quat::IDENTITY, logit(INITIAL_OPACITY), &sh);
    }
    Ok(cloud)
}

/// `count` points uniform in the cube `[-half, half]³` with random colors.
pub fn random_cloud(count: usize, half: f64, sh_degree: usize, rng: &mut impl Rng) -> Result<GaussianCloud> {
    let points: Vec<Vector3<f64>> =
        (0..count).map(|_| Vector3::from_fn(|_, _| rng.gen_range(-half..=half))).collect();
    let colors: Vec<Vector3<f64>> = (0..count).map(|_| Vector3::from_fn(|_, _| rng.gen_range(0.0..=1.0))).collect();
    cloud_from_points(&points, &colors, sh_degree)
}
