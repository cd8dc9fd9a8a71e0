//! Rotation representations, so(3) maps, positional encoding and rigid
//! transform interpolation.
//!
//! Deformations are carried as rotation vectors (axis-angle) so that a zero
//! vector is the identity and blending two rotations stays on SO(3).

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this angle exp/log switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the exp-map Jacobian uses its series form.
const JACOBIAN_SERIES_ANGLE: f64 = 1e-5;

/// Tolerance used to decide whether a matrix is a rotation.
const ROTATION_TOLERANCE: f64 = 1e-6;

/// Quaternion stored as `(w, x, y, z)`. Not necessarily normalized; every
/// conversion normalizes first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::DegenerateQuaternion);
        }
        Ok(Self::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn to_rotmat(self) -> Result<Matrix3<f64>> {
        quat_to_rotmat(self)
    }

    /// Quaternion of a rotation matrix, sign chosen so that `w >= 0`.
    pub fn from_rotmat(r: &Matrix3<f64>) -> Self {
        let trace = r.trace();
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            Quat::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quat::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quat::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        let n = q.norm();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        Quat::new(sign * q.w / n, sign * q.x / n, sign * q.y / n, sign * q.z / n)
    }
}

/// Rotation matrix of a (possibly unnormalized) quaternion.
pub fn quat_to_rotmat(q: Quat) -> Result<Matrix3<f64>> {
    let Quat { w, x, y, z } = q.normalized()?;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Pull a gradient on the rotation matrix back to the raw quaternion,
/// including the normalization step.
pub fn quat_to_rotmat_backward(q: Quat, grad: &Matrix3<f64>) -> Result<[f64; 4]> {
    let n = q.norm();
    let Quat { w, x, y, z } = q.normalized()?;
    let g = |r: usize, c: usize| grad[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let gu = [dw, dx, dy, dz];
    let u = [w, x, y, z];
    let dot: f64 = gu.iter().zip(&u).map(|(a, b)| a * b).sum();
    Ok([
        (gu[0] - u[0] * dot) / n,
        (gu[1] - u[1] * dot) / n,
        (gu[2] - u[2] * dot) / n,
        (gu[3] - u[3] * dot) / n,
    ])
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self(axis.normalize() * angle)
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_rotmat(&self) -> Matrix3<f64> {
        so3_exp(&self.0)
    }

    pub fn from_rotmat(r: &Matrix3<f64>) -> Result<Self> {
        so3_log(r).map(Self)
    }

    /// Equivalent vector with angle in `[0, π]`.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        if theta <= PI {
            return *self;
        }
        let wrapped = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
        Self(self.0 * (wrapped / theta))
    }
}

/// Exponential map so(3) -> SO(3) (Rodrigues).
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = hat(omega);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Gradient of a loss with respect to the rotation vector, given the
/// gradient with respect to `so3_exp(omega)`.
pub fn so3_exp_backward(omega: &Vector3<f64>, grad: &Matrix3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    let mut out = Vector3::zeros();
    if theta < JACOBIAN_SERIES_ANGLE {
        let k = hat(omega);
        for axis in 0..3 {
            let e = hat(&Vector3::ith(axis, 1.0));
            let d = e + 0.5 * (e * k + k * e);
            out[axis] = grad.component_mul(&d).sum();
        }
        return out;
    }
    let r = so3_exp(omega);
    let i_minus_r = Matrix3::identity() - r;
    let k = hat(omega);
    let inv = 1.0 / (theta * theta);
    for axis in 0..3 {
        let col = i_minus_r.column(axis).into_owned();
        let d = (omega[axis] * k + hat(&omega.cross(&col))) * inv * r;
        out[axis] = grad.component_mul(&d).sum();
    }
    out
}

/// Logarithm map SO(3) -> so(3) with angle in `[0, π]`.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let orth = r * r.transpose() - Matrix3::identity();
    if !r.iter().all(|v| v.is_finite())
        || orth.amax() > ROTATION_TOLERANCE
        || (r.determinant() - 1.0).abs() > 10.0 * ROTATION_TOLERANCE
    {
        return Err(Error::NotARotation);
    }
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let skew = vee(&(r - r.transpose()));
    if theta < SMALL_ANGLE {
        return Ok(0.5 * skew);
    }
    if PI - theta < 1e-2 {
        // sin θ is tiny: recover the axis from the symmetric part.
        let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
        let outer = sym / (1.0 - cos);
        let (mut best, mut best_val) = (0, outer[(0, 0)]);
        for i in 1..3 {
            if outer[(i, i)] > best_val {
                best = i;
                best_val = outer[(i, i)];
            }
        }
        let mut axis: Vector3<f64> = outer.column(best).into_owned() / best_val.max(1e-300).sqrt();
        axis.normalize_mut();
        if axis.dot(&skew) < 0.0 {
            axis = -axis;
        }
        return Ok(axis * theta);
    }
    Ok(skew * (theta / (2.0 * theta.sin())))
}

/// Inverse left Jacobian of SO(3) at `phi`: a rotation `exp(δ) exp(phi)`
/// has log `phi + J⁻¹ δ` to first order.
pub fn so3_left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let c = if theta < JACOBIAN_SERIES_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else if theta.sin() < 1e-12 {
        1.0 / (theta * theta)
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Frequency encoding: for every input scalar `x` emits
/// `(sin 2^0 x, cos 2^0 x, ..., sin 2^{L-1} x, cos 2^{L-1} x)`.
pub fn positional_encode(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_len(x.len(), freqs)];
    positional_encode_into(x, freqs, &mut out);
    out
}

pub fn encoded_len(dim: usize, freqs: usize) -> usize {
    2 * freqs * dim
}

pub fn positional_encode_into(x: &[f64], freqs: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), encoded_len(x.len(), freqs));
    for (d, &v) in x.iter().enumerate() {
        let base = d * 2 * freqs;
        let mut scale = 1.0;
        for k in 0..freqs {
            let (s, c) = (scale * v).sin_cos();
            out[base + 2 * k] = s;
            out[base + 2 * k + 1] = c;
            scale *= 2.0;
        }
    }
}

/// Gradient with respect to the inputs of [`positional_encode`].
pub fn positional_encode_backward(x: &[f64], freqs: usize, grad: &[f64]) -> Vec<f64> {
    debug_assert_eq!(grad.len(), encoded_len(x.len(), freqs));
    x.iter()
        .enumerate()
        .map(|(d, &v)| {
            let base = d * 2 * freqs;
            let mut scale = 1.0;
            let mut acc = 0.0;
            for k in 0..freqs {
                let (s, c) = (scale * v).sin_cos();
                acc += grad[base + 2 * k] * scale * c - grad[base + 2 * k + 1] * scale * s;
                scale *= 2.0;
            }
            acc
        })
        .collect()
}

/// Relative rigid motion: rotation vector plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: AxisAngle,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: AxisAngle(rotation), translation }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (w, t) = (self.rotation.0, self.translation);
        [w.x, w.y, w.z, t.x, t.y, t.z]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotmat()
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation_matrix().transpose();
        Self { rotation: AxisAngle(-self.rotation.0), translation: -(r_inv * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Result<Self> {
        let r = self.rotation_matrix();
        let rot = r * other.rotation_matrix();
        Ok(Self {
            rotation: AxisAngle::from_rotmat(&rot)?,
            translation: r * other.translation + self.translation,
        })
    }
}

/// Blend two transforms: translation linearly, rotation linearly in
/// axis-angle coordinates along the shorter branch.
pub fn interpolate_rigid(a: &RigidTransform, b: &RigidTransform, w: f64) -> RigidTransform {
    if w <= 0.0 {
        return *a;
    }
    if w >= 1.0 {
        return *b;
    }
    let wa = a.rotation.0;
    let mut wb = b.rotation.0;
    let theta_b = wb.norm();
    if theta_b > 0.0 && wa.dot(&wb) < 0.0 {
        let alt = wb * (1.0 - 2.0 * PI / theta_b);
        if (alt - wa).norm() < (wb - wa).norm() {
            wb = alt;
        }
    }
    let rotation = AxisAngle(wa + (wb - wa) * w).canonical();
    RigidTransform { rotation, translation: a.translation + (b.translation - a.translation) * w }
}
