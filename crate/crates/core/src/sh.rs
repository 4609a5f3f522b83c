//! Real spherical harmonics up to degree 3, in the sign convention used by
//! common splatting codebases (so coefficient files interoperate).

use crate::quat::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
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

/// Basis values and their gradients w.r.t. the (unit) direction.
fn basis(dir: &Vec3, degree: usize) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = SH_C3[0] * y * (3.0 * xx - yy);
        b[10] = SH_C3[1] * x * y * z;
        b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = SH_C3[5] * z * (xx - yy);
        b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        let s = |c: f64, v: [f64; 3]| v.map(|e| c * e);
        g[9] = s(SH_C3[0], [6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0]);
        g[10] = s(SH_C3[1], [y * z, x * z, x * y]);
        g[11] = s(SH_C3[2], [-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z]);
        g[12] = s(SH_C3[3], [-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy]);
        g[13] = s(SH_C3[4], [4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z]);
        g[14] = s(SH_C3[5], [2.0 * x * z, -2.0 * y * z, xx - yy]);
        g[15] = s(SH_C3[6], [3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0]);
    }
    (b, g)
}

fn degree_of(coeffs: &[f64]) -> usize {
    crate::gauss::sh_degree_of(coeffs.len()).expect("invalid SH coefficient count")
}

/// Color before the `[0, 1]` clamp, DC offset included.
pub fn eval_sh_unclamped(coeffs: &[f64], dir: &Vec3) -> [f64; 3] {
    let degree = degree_of(coeffs);
    let (b, _) = basis(dir, degree);
    let mut rgb = [0.5; 3];
    for k in 0..(degree + 1) * (degree + 1) {
        for (c, out) in rgb.iter_mut().enumerate() {
            *out += b[k] * coeffs[3 * k + c];
        }
    }
    rgb
}

/// View-dependent color for a unit viewing direction, clamped to `[0, 1]`.
pub fn eval_sh(coeffs: &[f64], dir: &Vec3) -> [f64; 3] {
    eval_sh_unclamped(coeffs, dir).map(|c| c.clamp(0.0, 1.0))
}

/// DC coefficient reproducing `rgb` for every direction.
pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

/// Backward of [`eval_sh`]: accumulates `dL/dcoeffs` into `grad_coeffs` and
/// returns `dL/ddir`. Clamped channels pass no gradient.
pub fn eval_sh_backward(
    coeffs: &[f64],
    dir: &Vec3,
    grad_rgb: &[f64; 3],
    grad_coeffs: &mut [f64],
) -> Vec3 {
    let degree = degree_of(coeffs);
    let (b, db) = basis(dir, degree);
    let raw = eval_sh_unclamped(coeffs, dir);
    let g: [f64; 3] =
        std::array::from_fn(|c| if raw[c] < 0.0 || raw[c] > 1.0 { 0.0 } else { grad_rgb[c] });
    let mut gdir = Vec3::zeros();
    for k in 0..(degree + 1) * (degree + 1) {
        let mut dot = 0.0;
        for c in 0..3 {
            grad_coeffs[3 * k + c] += b[k] * g[c];
            dot += g[c] * coeffs[3 * k + c];
        }
        gdir += Vec3::new(db[k][0], db[k][1], db[k][2]) * dot;
    }
    gdir
}
