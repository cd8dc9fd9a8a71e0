//! Motion networks, rigid transform application and the precomputed
//! per-timestep deformation cache.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{encoded_len, interpolate_rigid, positional_encode_backward, positional_encode_into, RigidTransform};
use crate::nn::{Mlp, MlpShape, Tape};

/// Architecture of a motion network mapping `(γ(x), γ(t))` to a rotation
/// vector and a translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub position_freqs: usize,
    pub time_freqs: usize,
    /// Hidden layer that sees the input again; active only when `depth > skip`.
    pub skip: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::superpoint()
    }
}

impl NetConfig {
    /// Per-superpoint network: 8 layers of 256.
    pub fn superpoint() -> Self {
        Self { depth: 8, width: 256, position_freqs: 10, time_freqs: 6, skip: 4 }
    }

    /// Per-Gaussian residual network: 3 layers of 64.
    pub fn nonrigid() -> Self {
        Self { depth: 3, width: 64, ..Self::superpoint() }
    }

    pub fn input_len(&self) -> usize {
        encoded_len(3, self.position_freqs) + encoded_len(1, self.time_freqs)
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape { input: self.input_len(), width: self.width, depth: self.depth, output: 6, skip: Some(self.skip) }
    }
}

/// A motion network: one rigid transform per input point.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformNet {
    pub config: NetConfig,
    pub mlp: Mlp,
}

/// The per-Gaussian residual network has the same form as the superpoint one.
pub type NonRigidNet = DeformNet;

/// Cached forward pass of a [`DeformNet`].
#[derive(Clone, Debug)]
pub struct NetTape {
    tape: Tape,
    points: Vec<Vector3<f64>>,
}

impl DeformNet {
    /// Random hidden layers, zero output layer.
    pub fn new(config: NetConfig, seed: u64) -> Self {
        Self { config, mlp: Mlp::new(config.shape(), seed) }
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        Ok(Self { config, mlp: Mlp::from_params(config.shape(), params)? })
    }

    pub fn encode(&self, points: &[Vector3<f64>], t: f64) -> Array2<f64> {
        let width = self.config.input_len();
        let pl = encoded_len(3, self.config.position_freqs);
        let mut x = Array2::zeros((points.len(), width));
        let te = crate::geom::positional_encode(&[t], self.config.time_freqs);
        for (mut row, p) in x.rows_mut().into_iter().zip(points) {
            let row = row.as_slice_mut().expect("row-major");
            positional_encode_into(p.as_slice(), self.config.position_freqs, &mut row[..pl]);
            row[pl..].copy_from_slice(&te);
        }
        x
    }

    /// Raw `N×6` outputs `(ω, t)` and the tape for [`DeformNet::backward`].
    pub fn forward(&self, points: &[Vector3<f64>], t: f64) -> (Array2<f64>, NetTape) {
        let (out, tape) = self.mlp.forward(self.encode(points, t));
        (out, NetTape { tape, points: points.to_vec() })
    }

    pub fn relu_pattern(&self, points: &[Vector3<f64>], t: f64) -> Vec<bool> {
        self.mlp.relu_pattern(self.encode(points, t))
    }

    pub fn predict(&self, points: &[Vector3<f64>], t: f64) -> Vec<RigidTransform> {
        outputs_to_transforms(&self.mlp.eval(self.encode(points, t)))
    }

    /// Parameter gradient and per-point position gradient for an `N×6`
    /// output gradient.
    pub fn backward(&self, tape: &NetTape, grad: &Array2<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let (g_params, g_x) = self.mlp.backward(&tape.tape, grad);
        let pl = encoded_len(3, self.config.position_freqs);
        let g_points = tape
            .points
            .iter()
            .zip(g_x.rows())
            .map(|(p, row)| {
                let enc: Vec<f64> = row.iter().take(pl).copied().collect();
                Vector3::from_vec(positional_encode_backward(p.as_slice(), self.config.position_freqs, &enc))
            })
            .collect();
        (g_params, g_points)
    }
}

pub fn outputs_to_transforms(out: &Array2<f64>) -> Vec<RigidTransform> {
    out.rows()
        .into_iter()
        .map(|r| RigidTransform::new(Vector3::new(r[0], r[1], r[2]), Vector3::new(r[3], r[4], r[5])))
        .collect()
}

/// One rigid transform per superpoint at time `t`.
pub fn predict_superpoint_deformation(net: &DeformNet, superpoints: &[Vector3<f64>], t: f64) -> Vec<RigidTransform> {
    net.predict(superpoints, t)
}

/// Per-Gaussian residual transforms evaluated at the rigidly deformed centers.
pub fn predict_nonrigid(net: &NonRigidNet, positions: &[Vector3<f64>], t: f64) -> Vec<RigidTransform> {
    net.predict(positions, t)
}

/// `μᵗ = ΔR μ^c + Δt`, `Rᵗ = ΔR R^c`.
pub fn apply_rigid(mean: &Vector3<f64>, rot: &Matrix3<f64>, transform: &RigidTransform) -> (Vector3<f64>, Matrix3<f64>) {
    let r = transform.rotation_matrix();
    (r * mean + transform.translation, r * rot)
}

/// Rigid part followed by the per-Gaussian residual.
pub fn compose_full(
    mean: &Vector3<f64>,
    rot: &Matrix3<f64>,
    rigid: &RigidTransform,
    residual: &RigidTransform,
) -> (Vector3<f64>, Matrix3<f64>) {
    let (m, r) = apply_rigid(mean, rot, rigid);
    apply_rigid(&m, &r, residual)
}

/// Move every Gaussian by the transform of its assigned superpoint.
pub fn deform_cloud(
    positions: &[Vector3<f64>],
    rotations: &[Matrix3<f64>],
    transforms: &[RigidTransform],
    assignment: &[u32],
) -> (Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    let mats: Vec<Matrix3<f64>> = transforms.iter().map(RigidTransform::rotation_matrix).collect();
    positions
        .par_iter()
        .zip(rotations.par_iter())
        .zip(assignment.par_iter())
        .map(|((p, r), &j)| {
            let j = j as usize;
            (mats[j] * p + transforms[j].translation, mats[j] * r)
        })
        .unzip()
}

/// Apply per-Gaussian residual transforms.
pub fn apply_residuals(
    positions: &[Vector3<f64>],
    rotations: &[Matrix3<f64>],
    residuals: &[RigidTransform],
) -> (Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
    positions
        .par_iter()
        .zip(rotations.par_iter())
        .zip(residuals.par_iter())
        .map(|((p, r), t)| apply_rigid(p, r, t))
        .unzip()
}

/// Superpoint transforms at every training timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationCache {
    pub times: Vec<f64>,
    /// `transforms[k][j]`: superpoint `j` at `times[k]`.
    pub transforms: Vec<Vec<RigidTransform>>,
}

impl DeformationCache {
    pub fn new(times: Vec<f64>, transforms: Vec<Vec<RigidTransform>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::TooFewTimesteps);
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Model("cache timesteps must be strictly increasing".into()));
        }
        if transforms.len() != times.len() {
            return Err(Error::Model("cache needs one transform set per timestep".into()));
        }
        let m = transforms[0].len();
        if transforms.iter().any(|t| t.len() != m) {
            return Err(Error::Model("ragged deformation cache".into()));
        }
        Ok(Self { times, transforms })
    }

    pub fn superpoints(&self) -> usize {
        self.transforms[0].len()
    }

    /// Interpolated transforms at `t`, clamped to the stored range. Exact
    /// at stored timesteps.
    pub fn at(&self, t: f64) -> Vec<RigidTransform> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.transforms[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.transforms[n - 1].clone();
        }
        let hi = self.times.partition_point(|&s| s < t);
        if self.times[hi] == t {
            return self.transforms[hi].clone();
        }
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        self.transforms[lo]
            .iter()
            .zip(&self.transforms[hi])
            .map(|(a, b)| interpolate_rigid(a, b, w))
            .collect()
    }
}

pub fn build_deformation_cache(net: &DeformNet, superpoints: &[Vector3<f64>], times: &[f64]) -> Result<DeformationCache> {
    let transforms = times.iter().map(|&t| net.predict(superpoints, t)).collect();
    DeformationCache::new(times.to_vec(), transforms)
}

pub fn deform_at_time(cache: &DeformationCache, t: f64) -> Vec<RigidTransform> {
    cache.at(t)
}
