//! Synthetic dynamic scene: clusters of Gaussians with known rigid motion,
//! rendered from cameras on a sphere.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::dataset::save_split;
use super::ply::save_ply;
use crate::deform::deform_cloud;
use crate::error::{Error, Result};
use crate::model::{RenderPath, SpgsModel};
use crate::geom::{so3_exp, Quat, RigidTransform};
use crate::rasterizer::{canonical_buffers, render, GaussianView, RenderSettings};
use crate::rasterizer::sh::rgb_to_sh_dc;
use crate::scene::{logit, Camera, Dataset, Frame, GaussianCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionKind {
    Translate,
    Rotate,
    /// Rotation about a pivot on the cluster's edge.
    Hinge,
    TranslateRotate,
}

impl std::str::FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(Self::Translate),
            "rotate" => Ok(Self::Rotate),
            "hinge" => Ok(Self::Hinge),
            "translate-rotate" | "translate+rotate" => Ok(Self::TranslateRotate),
            _ => Err(Error::Config(format!("unknown motion kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub motion: MotionKind,
    pub timesteps: usize,
    /// Cameras on the sphere; the last `test_cameras` are held out.
    pub cameras: usize,
    pub test_cameras: usize,
    pub width: usize,
    pub height: usize,
    pub camera_radius: f64,
    pub fov_x: f64,
    /// Largest translation over the sequence.
    pub translation: f64,
    /// Largest rotation angle over the sequence (radians).
    pub rotation: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            clusters: 2,
            per_cluster: 100,
            motion: MotionKind::TranslateRotate,
            timesteps: 20,
            cameras: 10,
            test_cameras: 2,
            width: 64,
            height: 64,
            camera_radius: 4.0,
            fov_x: 0.75,
            translation: 0.4,
            rotation: PI / 3.0,
            seed: 0,
        }
    }
}

/// Ground truth of a generated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyMotion {
    pub times: Vec<f64>,
    /// Cluster index of every Gaussian.
    pub cluster_of: Vec<usize>,
    pub centers: Vec<Vector3<f64>>,
    /// `transforms[t][k]` maps the time-0 configuration of cluster `k` to
    /// time `times[t]`.
    pub transforms: Vec<Vec<RigidTransform>>,
    /// Largest camera distance from the origin.
    pub extent: f64,
}

#[derive(Clone, Debug)]
pub struct ToyScene {
    pub spec: ToySpec,
    /// Gaussians at time 0.
    pub cloud: GaussianCloud,
    pub motion: ToyMotion,
    pub dataset: Dataset,
}

/// Motion of one cluster: rotate by `angle·s` about `axis` through `pivot`,
/// then translate by `offset·s`, where `s` is normalized time.
#[derive(Clone, Copy, Debug)]
struct ClusterMotion {
    axis: Vector3<f64>,
    angle: f64,
    pivot: Vector3<f64>,
    offset: Vector3<f64>,
}

impl ClusterMotion {
    fn at(&self, s: f64) -> RigidTransform {
        let omega = self.axis * self.angle * s;
        let r: Matrix3<f64> = so3_exp(&omega);
        RigidTransform::new(omega, self.pivot - r * self.pivot + self.offset * s)
    }
}

fn sphere_cameras(spec: &ToySpec) -> Vec<Camera> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..spec.cameras)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / spec.cameras as f64;
            let r = (1.0 - y * y).sqrt();
            let a = golden * i as f64;
            // Flattened toward the equator so no camera sits at a pole.
            let eye = Vector3::new(r * a.cos(), r * a.sin(), 0.8 * y).normalize() * spec.camera_radius;
            let forward = -eye.normalize();
            let up = if forward.z.abs() > 0.95 { Vector3::y() } else { Vector3::z() };
            Camera::look_at(eye, Vector3::zeros(), up, spec.fov_x, spec.width, spec.height)
        })
        .collect()
}

pub fn generate_toy_scene(spec: &ToySpec) -> Result<ToyScene> {
    if spec.clusters == 0 || spec.per_cluster == 0 {
        return Err(Error::Config("toy scene needs at least one Gaussian".into()));
    }
    if spec.timesteps < 2 {
        return Err(Error::TooFewTimesteps);
    }
    if spec.test_cameras >= spec.cameras {
        return Err(Error::Config("need at least one training camera".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let spread = Normal::new(0.0, 0.15).expect("valid sigma");
    let mut cloud = GaussianCloud::with_capacity(spec.clusters * spec.per_cluster, 0);
    let mut cluster_of = Vec::new();
    let mut centers = Vec::new();
    let mut motions = Vec::new();
    for k in 0..spec.clusters {
        let phi = 2.0 * PI * k as f64 / spec.clusters as f64;
        let center = if spec.clusters == 1 { Vector3::zeros() } else { Vector3::new(phi.cos(), phi.sin(), 0.0) * 0.5 };
        let base = Vector3::new(rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9));
        for _ in 0..spec.per_cluster {
            let p = center + Vector3::from_fn(|_, _| spread.sample(&mut rng));
            let log_scale = Vector3::from_fn(|_, _| rng.gen_range(0.03f64..0.07).ln());
            let q = Quat::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                .normalized()
                .unwrap_or(Quat::IDENTITY);
            let color = base.map(|c| (c + rng.gen_range(-0.1f64..0.1)).clamp(0.0, 1.0));
            let sh = [rgb_to_sh_dc(color.x), rgb_to_sh_dc(color.y), rgb_to_sh_dc(color.z)];
            cloud.push(p, log_scale, q, logit(rng.gen_range(0.7..0.95)), &sh);
            cluster_of.push(k);
        }
        let axis = Vector3::from(UnitSphere.sample(&mut rng));
        let dir = Vector3::from(UnitSphere.sample(&mut rng));
        let (angle, offset, pivot) = match spec.motion {
            MotionKind::Translate => (0.0, dir * spec.translation, center),
            MotionKind::Rotate => (spec.rotation, Vector3::zeros(), center),
            MotionKind::Hinge => (spec.rotation, Vector3::zeros(), center + dir.cross(&axis).normalize() * 0.3),
            MotionKind::TranslateRotate => (spec.rotation, dir * spec.translation, center),
        };
        centers.push(center);
        motions.push(ClusterMotion { axis, angle, pivot, offset });
    }

    let times: Vec<f64> = (0..spec.timesteps).map(|i| i as f64 / (spec.timesteps - 1) as f64).collect();
    let transforms: Vec<Vec<RigidTransform>> = times.iter().map(|&s| motions.iter().map(|m| m.at(s)).collect()).collect();
    let cameras = sphere_cameras(spec);
    let (pos0, rot0) = canonical_buffers(&cloud)?;
    let assignment: Vec<u32> = cluster_of.iter().map(|&k| k as u32).collect();
    let background = Vector3::zeros();
    let settings = RenderSettings::default();
    let n_train = spec.cameras - spec.test_cameras;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ti, &s) in times.iter().enumerate() {
        let (pos, rot) = deform_cloud(&pos0, &rot0, &transforms[ti], &assignment);
        let view = GaussianView::new(&cloud, &pos, &rot);
        for (ci, cam) in cameras.iter().enumerate() {
            let image = render(&view, cam, &background, &settings).output.image;
            let frame = Frame { name: format!("r_{ci:02}_{ti:03}"), camera: cam.clone(), time: s, image: Some(image) };
            if ci < n_train { train.push(frame) } else { test.push(frame) }
        }
    }
    let dataset = Dataset::new(train, test, background)?;
    let motion = ToyMotion { times, cluster_of, centers, transforms, extent: spec.camera_radius };
    Ok(ToyScene { spec: spec.clone(), cloud, motion, dataset })
}

/// Write the dataset, the time-0 cloud (`gt_cloud.ply`) and the motion
/// (`gt_motion.json`) under `dir`.
pub fn write_toy_scene(scene: &ToyScene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_split(dir, "train", &scene.dataset.train, &scene.dataset.background)?;
    save_split(dir, "test", &scene.dataset.test, &scene.dataset.background)?;
    save_ply(&scene.cloud, &dir.join("gt_cloud.ply"))?;
    std::fs::write(dir.join("gt_motion.json"), serde_json::to_string_pretty(&scene.motion)?)?;
    std::fs::write(dir.join("toy_spec.json"), serde_json::to_string_pretty(&scene.spec)?)?;
    Ok(())
}

pub fn load_toy_motion(path: &Path) -> Result<ToyMotion> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Agreement between a model's superpoint motion and the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MotionRecovery {
    /// (superpoint, timestep) pairs scored.
    pub pairs: usize,
    /// Share of pairs within both tolerances.
    pub within: f64,
    pub mean_rotation_deg: f64,
    /// Mean displacement error as a fraction of the extent.
    pub mean_translation: f64,
    /// Mean of both errors, each divided by its tolerance.
    pub score: f64,
}

/// Compare superpoint motion relative to the first timestep against the
/// motion of each superpoint's majority cluster. Gaussians are labeled by
/// the nearest ground-truth Gaussian at the first timestep; the translation
/// error is the displacement error at the superpoint's own position.
pub fn motion_recovery(
    model: &SpgsModel,
    motion: &ToyMotion,
    gt_cloud: &GaussianCloud,
    path: RenderPath,
    rotation_tol_deg: f64,
    translation_tol: f64,
) -> Result<MotionRecovery> {
    let t0 = motion.times[0];
    let (pos0, _) = model.deformed(t0, path)?;
    let gt: Vec<Vector3<f64>> = (0..gt_cloud.len()).map(|i| gt_cloud.position(i)).collect();
    let label: Vec<usize> = pos0
        .iter()
        .map(|p| {
            let nearest = (0..gt.len()).min_by(|&a, &b| (gt[a] - p).norm_squared().total_cmp(&(gt[b] - p).norm_squared()));
            motion.cluster_of[nearest.expect("non-empty ground truth")]
        })
        .collect();
    let sp = model.superpoints()?;
    let clusters = motion.transforms[0].len();
    let mut votes = vec![vec![0usize; clusters]; sp.len()];
    for (&j, &c) in model.assignment()?.iter().zip(&label) {
        votes[j as usize][c] += 1;
    }
    let base = model.superpoint_transforms(t0, path)?;
    let (mut pairs, mut ok, mut rot_sum, mut tr_sum) = (0, 0, 0.0, 0.0);
    for (ti, &t) in motion.times.iter().enumerate() {
        let now = model.superpoint_transforms(t, path)?;
        for j in 0..sp.len() {
            let Some(cluster) = (0..clusters).filter(|&c| votes[j][c] > 0).max_by_key(|&c| (votes[j][c], std::cmp::Reverse(c))) else {
                continue;
            };
            let (r0, rt) = (base[j].rotation_matrix(), now[j].rotation_matrix());
            let rel_r = rt * r0.transpose();
            let g = &motion.transforms[ti][cluster];
            let cos = (((rel_r * g.rotation_matrix().transpose()).trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
            let rot_err = cos.acos().to_degrees();
            let anchor = base[j].apply(&sp.positions[j]);
            let tr_err = (now[j].apply(&sp.positions[j]) - g.apply(&anchor)).norm() / motion.extent;
            pairs += 1;
            if rot_err <= rotation_tol_deg && tr_err <= translation_tol {
                ok += 1;
            }
            rot_sum += rot_err;
            tr_sum += tr_err;
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyScene);
    }
    let n = pairs as f64;
    let (mean_rotation_deg, mean_translation) = (rot_sum / n, tr_sum / n);
    Ok(MotionRecovery {
        pairs,
        within: ok as f64 / n,
        mean_rotation_deg,
        mean_translation,
        score: 0.5 * (mean_rotation_deg / rotation_tol_deg + mean_translation / translation_tol),
    })
}
