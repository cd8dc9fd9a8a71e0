//! Shared fixtures for unit tests.

use nalgebra::{Matrix4, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::Quat;
use crate::scene::{Camera, GaussianCloud};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_quat(rng: &mut impl Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 0.2 {
            return q;
        }
    }
}

/// Camera at the origin looking down +z.
pub fn front_camera(width: usize, height: usize) -> Camera {
    Camera::from_fov(Matrix4::identity(), 0.9, width, height)
}

/// `count` Gaussians scattered in front of [`front_camera`].
pub fn random_cloud(rng: &mut impl Rng, count: usize, sh_degree: usize, max_opacity: f64) -> GaussianCloud {
    let mut cloud = GaussianCloud::with_capacity(count, sh_degree);
    let stride = cloud.sh_stride();
    for _ in 0..count {
        let z = rng.gen_range(3.0..5.0);
        let pos = Vector3::new(rng.gen_range(-0.35..0.35) * z, rng.gen_range(-0.35..0.35) * z, z);
        let log_scale = Vector3::new(
            rng.gen_range(-2.8f64..-1.2),
            rng.gen_range(-2.8f64..-1.2),
            rng.gen_range(-2.8f64..-1.2),
        );
        let opacity: f64 = rng.gen_range(0.2..max_opacity);
        let sh: Vec<f64> = (0..stride)
            .map(|k| if k < 3 { rng.gen_range(-1.2..1.2) } else { rng.gen_range(-0.3..0.3) })
            .collect();
        cloud.push(pos, log_scale, random_quat(rng), (opacity / (1.0 - opacity)).ln(), &sh);
    }
    cloud
}
