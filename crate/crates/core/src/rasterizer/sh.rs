//! Real spherical harmonics up to degree 3, in the layout used by 3D-GS
//! checkpoints.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values and their gradients with respect to the (unit) direction,
/// treating each basis function as a polynomial in `(x, y, z)`.
pub fn sh_basis(degree: usize, dir: &Vector3<f64>) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut v = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    v[0] = SH_C0;
    if degree >= 1 {
        v[1] = -SH_C1 * y;
        v[2] = SH_C1 * z;
        v[3] = -SH_C1 * x;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        v[4] = SH_C2[0] * x * y;
        v[5] = SH_C2[1] * y * z;
        v[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        v[7] = SH_C2[3] * x * z;
        v[8] = SH_C2[4] * (xx - yy);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        v[9] = SH_C3[0] * y * (3.0 * xx - yy);
        v[10] = SH_C3[1] * x * y * z;
        v[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        v[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        v[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        v[14] = SH_C3[5] * z * (xx - yy);
        v[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        g[9] = [6.0 * SH_C3[0] * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
        g[10] = [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y];
        g[11] = [
            -2.0 * SH_C3[2] * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * SH_C3[2] * y * z,
        ];
        g[12] = [
            -6.0 * SH_C3[3] * x * z,
            -6.0 * SH_C3[3] * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ];
        g[13] = [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * SH_C3[4] * x * y,
            8.0 * SH_C3[4] * x * z,
        ];
        g[14] = [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)];
        g[15] = [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0];
    }
    (v, g)
}

/// Color of a Gaussian seen along `dir`: SH expansion plus 0.5, clamped at 0.
/// `coeffs` holds `B×3` values with `B >= (degree+1)^2`.
pub fn compute_sh_color(coeffs: &[f64], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let (basis, _) = sh_basis(degree, dir);
    let n = (degree + 1) * (degree + 1);
    let mut rgb = [0.5; 3];
    for (b, y) in basis.iter().enumerate().take(n) {
        for c in 0..3 {
            rgb[c] += y * coeffs[b * 3 + c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// SH DC coefficient that produces `color` for every direction.
pub fn rgb_to_sh_dc(color: f64) -> f64 {
    (color - 0.5) / SH_C0
}
