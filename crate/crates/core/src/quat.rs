//! Quaternions stored as `(w, x, y, z)`.
//!
//! Only the handful of operations the scene model needs: rotation matrices
//! (with their adjoint for backpropagation), Hamilton products and sign
//! alignment for short-arc interpolation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat(pub [f64; 4]);

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat([1.0, 0.0, 0.0, 0.0]);

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat([w, x, y, z])
    }

    /// Rotation by `angle` radians about `axis` (normalized internally).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalize();
        let (s, c) = (0.5 * angle).sin_cos();
        Quat([c, s * a.x, s * a.y, s * a.z])
    }

    pub fn w(&self) -> f64 {
        self.0[0]
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit quaternion in the same direction; identity for a zero input.
    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        self.scale(1.0 / n)
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat(self.0.map(|c| c * s))
    }

    pub fn neg(&self) -> Quat {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &Quat) -> Quat {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0.iter()) {
            *o += b;
        }
        Quat(out)
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn mul(&self, rhs: &Quat) -> Quat {
        let [aw, ax, ay, az] = self.0;
        let [bw, bx, by, bz] = rhs.0;
        Quat([
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ])
    }

    /// `other` or `-other`, whichever lies on the same hemisphere as `self`.
    pub fn aligned(&self, other: &Quat) -> Quat {
        if self.dot(other) < 0.0 {
            other.neg()
        } else {
            *other
        }
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_rotation_matrix(&self) -> Mat3 {
        unit_rotation_matrix(&self.normalized())
    }

    /// Angle of the rotation taking `self` to `other` (both unit), in radians
    /// on the quaternion sphere, i.e. half the 3D rotation angle.
    pub fn arc_angle(&self, other: &Quat) -> f64 {
        self.dot(other).abs().min(1.0).acos()
    }
}

fn unit_rotation_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = q.0;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (possibly non-unit) quaternion that
/// [`Quat::to_rotation_matrix`] normalizes first.
pub fn rotation_matrix_backward(q: &Quat, grad_r: &Mat3) -> [f64; 4] {
    let n = q.norm();
    let u = q.scale(1.0 / n);
    let [w, x, y, z] = u.0;
    let g = |r: usize, c: usize| grad_r[(r, c)];

    let gw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));

    let gu = [gw, gx, gy, gz];
    let radial: f64 = gu.iter().zip(u.0.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gu[i] - u.0[i] * radial) / n;
    }
    out
}

pub(crate) fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}
