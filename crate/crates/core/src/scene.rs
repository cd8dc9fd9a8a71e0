//! Canonical-space data model: Gaussians, cameras, frames and datasets.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Quat;
use crate::image::Image;

/// Number of SH coefficients per channel for a given degree.
pub fn sh_basis_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Canonical 3D Gaussians with raw (pre-activation) parameters.
///
/// Arrays are flat: `positions`/`log_scales` are `P×3`, `rotations` is `P×4`
/// as `(w, x, y, z)`, and `sh` is `P×B×3` with coefficients major and
/// channels minor.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub rotations: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<f64>,
    pub sh_degree: usize,
}

/// Activated parameters of one Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivatedGaussian<'a> {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: Quat,
    pub opacity: f64,
    pub sh: &'a [f64],
}

impl GaussianCloud {
    pub fn with_capacity(count: usize, sh_degree: usize) -> Self {
        let b = sh_basis_count(sh_degree);
        Self {
            positions: Vec::with_capacity(count * 3),
            log_scales: Vec::with_capacity(count * 3),
            rotations: Vec::with_capacity(count * 4),
            opacity_logits: Vec::with_capacity(count),
            sh: Vec::with_capacity(count * b * 3),
            sh_degree,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logits.is_empty()
    }

    pub fn sh_stride(&self) -> usize {
        sh_basis_count(self.sh_degree) * 3
    }

    /// Append a Gaussian given raw parameters; `sh` must hold `B×3` values.
    pub fn push(
        &mut self,
        position: Vector3<f64>,
        log_scale: Vector3<f64>,
        rotation: Quat,
        opacity_logit: f64,
        sh: &[f64],
    ) {
        assert_eq!(sh.len(), self.sh_stride(), "sh coefficient count");
        self.positions.extend_from_slice(position.as_slice());
        self.log_scales.extend_from_slice(log_scale.as_slice());
        self.rotations.extend_from_slice(&rotation.to_array());
        self.opacity_logits.push(opacity_logit);
        self.sh.extend_from_slice(sh);
    }

    pub fn position(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.positions[3 * i..3 * i + 3])
    }

    pub fn set_position(&mut self, i: usize, p: &Vector3<f64>) {
        self.positions[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
    }

    pub fn log_scale(&self, i: usize) -> Vector3<f64> {
        Vector3::from_column_slice(&self.log_scales[3 * i..3 * i + 3])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scale(i).map(f64::exp)
    }

    pub fn rotation(&self, i: usize) -> Quat {
        let r = &self.rotations[4 * i..4 * i + 4];
        Quat::new(r[0], r[1], r[2], r[3])
    }

    pub fn set_rotation(&mut self, i: usize, q: Quat) {
        self.rotations[4 * i..4 * i + 4].copy_from_slice(&q.to_array());
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn sh_coeffs(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn rotation_matrices(&self) -> Result<Vec<Matrix3<f64>>> {
        (0..self.len()).map(|i| self.rotation(i).to_rotmat()).collect()
    }

    pub fn activate(&self, i: usize) -> Result<ActivatedGaussian<'_>> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(ActivatedGaussian {
            mean: self.position(i),
            scale: self.scale(i),
            rotation: self.rotation(i).normalized()?,
            opacity: self.opacity(i),
            sh: self.sh_coeffs(i),
        })
    }

    /// Keep only rows where `keep[i]` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let stride = self.sh_stride();
        retain_rows(&mut self.positions, 3, keep);
        retain_rows(&mut self.log_scales, 3, keep);
        retain_rows(&mut self.rotations, 4, keep);
        retain_rows(&mut self.opacity_logits, 1, keep);
        retain_rows(&mut self.sh, stride, keep);
    }

    /// Append row `i` of `self` again (used by densification).
    pub fn duplicate(&mut self, i: usize) {
        let stride = self.sh_stride();
        extend_row(&mut self.positions, 3, i);
        extend_row(&mut self.log_scales, 3, i);
        extend_row(&mut self.rotations, 4, i);
        extend_row(&mut self.opacity_logits, 1, i);
        extend_row(&mut self.sh, stride, i);
    }

    pub fn append(&mut self, other: &GaussianCloud) -> Result<()> {
        if other.sh_degree != self.sh_degree {
            return Err(Error::ShapeMismatch(format!(
                "sh degree {} vs {}",
                self.sh_degree, other.sh_degree
            )));
        }
        self.positions.extend_from_slice(&other.positions);
        self.log_scales.extend_from_slice(&other.log_scales);
        self.rotations.extend_from_slice(&other.rotations);
        self.opacity_logits.extend_from_slice(&other.opacity_logits);
        self.sh.extend_from_slice(&other.sh);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.len();
        if p == 0 {
            return Err(Error::EmptyCloud);
        }
        if self.positions.len() != 3 * p
            || self.log_scales.len() != 3 * p
            || self.rotations.len() != 4 * p
            || self.sh.len() != self.sh_stride() * p
        {
            return Err(Error::ShapeMismatch("gaussian cloud arrays".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::ShapeMismatch(format!("sh degree {} > 3", self.sh_degree)));
        }
        Ok(())
    }

    /// Round every parameter through `f32`, the storage precision of all
    /// on-disk formats.
    pub fn quantize_f32(&mut self) {
        for v in self
            .positions
            .iter_mut()
            .chain(self.log_scales.iter_mut())
            .chain(self.rotations.iter_mut())
            .chain(self.opacity_logits.iter_mut())
            .chain(self.sh.iter_mut())
        {
            *v = *v as f32 as f64;
        }
    }
}

pub(crate) fn retain_rows<T: Copy>(data: &mut Vec<T>, stride: usize, keep: &[bool]) {
    let mut w = 0;
    for (i, &k) in keep.iter().enumerate() {
        if k {
            if w != i {
                data.copy_within(i * stride..(i + 1) * stride, w * stride);
            }
            w += 1;
        }
    }
    data.truncate(w * stride);
}

pub(crate) fn extend_row<T: Copy>(data: &mut Vec<T>, stride: usize, i: usize) {
    data.extend_from_within(i * stride..(i + 1) * stride);
}

/// `Σ = R S Sᵀ Rᵀ`, symmetric by construction.
pub fn build_covariance(scale: &Vector3<f64>, rotation: Quat) -> Result<Matrix3<f64>> {
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::NonPositiveScale);
    }
    let r = rotation.to_rotmat()?;
    Ok(covariance_from_rotmat(scale, &r))
}

pub(crate) fn covariance_from_rotmat(scale: &Vector3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    let m = r * Matrix3::from_diagonal(scale);
    let mut cov = m * m.transpose();
    for i in 0..3 {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov
}

/// Unnormalized Gaussian kernel `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn evaluate_gaussian(cov: &Matrix3<f64>, mean: &Vector3<f64>, x: &Vector3<f64>) -> Result<f64> {
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    let d = x - mean;
    let y = chol.solve(&d);
    Ok((-0.5 * d.dot(&y)).exp())
}

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub const DEFAULT_NEAR: f64 = 0.01;
    pub const DEFAULT_FAR: f64 = 100.0;

    /// Camera with horizontal field of view `fov_x` and centered principal point.
    pub fn from_fov(world_to_camera: Matrix4<f64>, fov_x: f64, width: usize, height: usize) -> Self {
        let fx = width as f64 / (2.0 * (0.5 * fov_x).tan());
        Self {
            world_to_camera,
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            near: Self::DEFAULT_NEAR,
            far: Self::DEFAULT_FAR,
        }
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let c2w_rot = Matrix3::from_columns(&[right, down, forward]);
        let rot = c2w_rot.transpose();
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rot * eye)));
        Self::from_fov(w2c, fov_x, width, height)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.rotation();
        let finite = self.world_to_camera.iter().all(|v| v.is_finite());
        if !finite || (r * r.transpose() - Matrix3::identity()).amax() > 1e-5 || r.determinant() < 0.0 {
            return Err(Error::Dataset("camera rotation is not a rotation".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Dataset("invalid camera intrinsics".into()));
        }
        Ok(())
    }
}

/// One view of the dynamic scene at a normalized time.
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub camera: Camera,
    pub time: f64,
    pub image: Option<Image>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Frame>,
    pub test: Vec<Frame>,
    /// Sorted distinct training timesteps.
    pub train_times: Vec<f64>,
    pub background: Vector3<f64>,
}

impl Dataset {
    pub fn new(train: Vec<Frame>, test: Vec<Frame>, background: Vector3<f64>) -> Result<Self> {
        let mut times: Vec<f64> = train.iter().map(|f| f.time).collect();
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Dataset("non-finite frame time".into()));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        if times.len() < 2 {
            return Err(Error::Dataset("need at least 2 distinct training timesteps".into()));
        }
        for f in train.iter().chain(&test) {
            f.camera.validate()?;
        }
        Ok(Self { train, test, train_times: times, background })
    }

    /// 3D-GS style scene extent: 1.1 × the largest camera distance from the
    /// mean camera center.
    pub fn extent(&self) -> f64 {
        let centers: Vec<Vector3<f64>> = self.train.iter().map(|f| f.camera.center()).collect();
        let mean = centers.iter().fold(Vector3::zeros(), |a, c| a + c) / centers.len().max(1) as f64;
        let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
        1.1 * radius.max(1e-6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn single(log_scale: Vector3<f64>, opacity_logit: f64) -> GaussianCloud {
        let mut c = GaussianCloud::with_capacity(1, 0);
        c.push(Vector3::new(1.0, 2.0, 3.0), log_scale, Quat::new(2.0, 0.0, 0.0, 0.0), opacity_logit, &[0.1, 0.2, 0.3]);
        c
    }

    #[test]
    fn activation_rules() {
        let c = single(Vector3::zeros(), 0.0);
        let g = c.activate(0).unwrap();
        assert_eq!(g.scale, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(g.opacity, 0.5);
        assert_eq!(g.rotation, Quat::IDENTITY);
        let c = single(Vector3::zeros(), 9f64.ln());
        assert!((c.activate(0).unwrap().opacity - 0.9).abs() < 1e-15);
        assert!(matches!(c.activate(1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn covariance_examples() {
        let id = build_covariance(&Vector3::new(1.0, 1.0, 1.0), Quat::IDENTITY).unwrap();
        assert_eq!(id, Matrix3::identity());
        let c = build_covariance(&Vector3::new(2.0, 1.0, 1.0), Quat::IDENTITY).unwrap();
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
        let q = Quat::new((PI / 4.0).cos(), 0.0, 0.0, (PI / 4.0).sin());
        let c = build_covariance(&Vector3::new(2.0, 1.0, 1.0), q).unwrap();
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).amax() < 1e-14);
        assert!(matches!(
            build_covariance(&Vector3::new(1.0, 0.0, 1.0), Quat::IDENTITY),
            Err(Error::NonPositiveScale)
        ));
    }

    #[test]
    fn gaussian_kernel_examples() {
        let mu = Vector3::new(0.5, -1.0, 2.0);
        assert_eq!(evaluate_gaussian(&Matrix3::identity(), &mu, &mu).unwrap(), 1.0);
        let v = evaluate_gaussian(&Matrix3::identity(), &mu, &(mu + Vector3::x())).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        let cov = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        let v = evaluate_gaussian(&cov, &mu, &(mu + Vector3::new(2.0, 0.0, 0.0))).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!(matches!(
            evaluate_gaussian(&Matrix3::zeros(), &mu, &mu),
            Err(Error::SingularCovariance)
        ));
    }

    #[test]
    fn look_at_points_forward() {
        let cam = Camera::look_at(Vector3::new(0.0, -4.0, 0.0), Vector3::zeros(), Vector3::z(), 1.0, 32, 32);
        let p = cam.to_camera(&Vector3::zeros());
        assert!((p - Vector3::new(0.0, 0.0, 4.0)).amax() < 1e-12);
        assert!((cam.center() - Vector3::new(0.0, -4.0, 0.0)).amax() < 1e-12);
        // world +z is image up, i.e. negative camera y
        assert!(cam.to_camera(&Vector3::z()).y < 0.0);
        cam.validate().unwrap();
    }

    #[test]
    fn retain_and_duplicate_rows() {
        let mut c = GaussianCloud::with_capacity(3, 0);
        for i in 0..3 {
            c.push(Vector3::repeat(i as f64), Vector3::zeros(), Quat::IDENTITY, i as f64, &[i as f64; 3]);
        }
        c.retain(&[true, false, true]);
        assert_eq!(c.len(), 2);
        assert_eq!(c.position(1), Vector3::repeat(2.0));
        c.duplicate(0);
        assert_eq!(c.len(), 3);
        assert_eq!(c.sh_coeffs(2), &[0.0; 3]);
        c.validate().unwrap();
    }

    proptest! {
        #[test]
        fn prop_covariance_trace_is_rotation_invariant(
            s0 in 0.01..3.0f64, s1 in 0.01..3.0f64, s2 in 0.01..3.0f64,
            w in -1.0..1.0f64, x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64,
        ) {
            let q = Quat::new(w, x, y, z);
            prop_assume!(q.norm() > 1e-2);
            let c = build_covariance(&Vector3::new(s0, s1, s2), q).unwrap();
            prop_assert_eq!(c, c.transpose());
            prop_assert!((c.trace() - (s0 * s0 + s1 * s1 + s2 * s2)).abs() < 1e-10);
        }

        #[test]
        fn prop_kernel_is_rotation_invariant(
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, ang in 0.0..3.0f64,
            dx in -2.0..2.0f64, dy in -2.0..2.0f64, dz in -2.0..2.0f64,
        ) {
            let axis = Vector3::new(ax, ay, 0.7);
            let rot = crate::geom::so3_exp(&(axis.normalize() * ang));
            let cov = build_covariance(&Vector3::new(0.5, 1.2, 0.8), Quat::new(0.9, 0.1, -0.3, 0.2)).unwrap();
            let mu = Vector3::new(0.3, -0.2, 1.0);
            let x = mu + Vector3::new(dx, dy, dz);
            let a = evaluate_gaussian(&cov, &mu, &x).unwrap();
            let b = evaluate_gaussian(&(rot * cov * rot.transpose()), &(rot * mu), &(rot * x)).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
