//! EWA projection of 3D Gaussians onto the image plane.

use nalgebra::{Matrix2, Matrix2x3};

use crate::gauss::{Camera, SourceId};
use crate::quat::{Mat3, Vec3};
use crate::sh;

use super::RealizedGaussian;

/// Added to the diagonal of every projected covariance (pixels²).
pub const DILATION: f64 = 0.3;
/// Gaussians closer than this to the camera plane are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// A Gaussian projected into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the realized Gaussian this splat came from.
    pub realized: usize,
    pub source: SourceId,
    pub mean_px: [f64; 2],
    /// `[a, b, c]` of the symmetric matrix `[[a, b], [b, c]]`, dilation included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Three standard deviations along the major axis.
    pub radius_px: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Splat2D {
    pub fn max_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov2d;
        0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()
    }
}

/// Upstream gradient for one splat, as produced by the rasterizer.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean_px: [f64; 2],
    /// Derivative w.r.t. the packed conic scalars `[a, b, c]`, where `b`
    /// enters the quadratic form twice.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl SplatGrad {
    pub(crate) fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean_px[k] += o.mean_px[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

fn jacobian(cam: &Camera, t: &Vec3) -> Matrix2x3<f64> {
    let z = t.z;
    let z2 = z * z;
    Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * t.x / z2,
        0.0,
        cam.fy / z,
        -cam.fy * t.y / z2,
    )
}

/// Projects `g` into `cam`; `None` when behind the near plane or when the
/// 3σ ellipse misses the viewport.
pub fn project(g: &RealizedGaussian<'_>, index: usize, cam: &Camera) -> Option<Splat2D> {
    let rot = cam.rotation();
    let t = rot * g.mean + cam.translation();
    if t.z <= NEAR_PLANE {
        return None;
    }
    let m = jacobian(cam, &t) * rot;
    let cov = m * g.cov * m.transpose() + Matrix2::identity() * DILATION;
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let mean_px = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
    let lambda = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let radius = 3.0 * lambda.sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean_px[0] + radius < 0.0
        || mean_px[0] - radius > w
        || mean_px[1] + radius < 0.0
        || mean_px[1] - radius > h
    {
        return None;
    }
    let dir = (g.mean - cam.center()).normalize();
    Some(Splat2D {
        realized: index,
        source: g.source,
        mean_px,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        radius_px: radius,
        color: sh::eval_sh(g.sh, &dir),
        opacity: g.opacity,
    })
}

/// Gradients flowing out of [`project`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectGrad {
    pub mean: Vec3,
    pub cov: Mat3,
    pub opacity: f64,
}

/// Chains a splat gradient back to the world-space mean, covariance and
/// effective opacity; SH gradients are accumulated into `grad_sh`.
pub fn project_backward(
    g: &RealizedGaussian<'_>,
    cam: &Camera,
    grad: &SplatGrad,
    grad_sh: &mut [f64],
) -> ProjectGrad {
    let rot = cam.rotation();
    let t = rot * g.mean + cam.translation();
    let j = jacobian(cam, &t);
    let m = j * rot;
    let cov = m * g.cov * m.transpose() + Matrix2::identity() * DILATION;
    let conic = cov.try_inverse().unwrap_or_else(Matrix2::zeros);

    // Conic → 2D covariance: dK⁻¹ = −K⁻¹ dK K⁻¹.
    let gk = Matrix2::new(grad.conic[0], 0.5 * grad.conic[1], 0.5 * grad.conic[1], grad.conic[2]);
    let gcov2 = -(conic * gk * conic);

    let gcov3 = m.transpose() * gcov2 * m;
    let gm = 2.0 * gcov2 * m * g.cov;
    let gj = gm * rot.transpose();

    let (z, z2, z3) = (t.z, t.z * t.z, t.z * t.z * t.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let mut gt = Vec3::new(
        gj[(0, 2)] * (-fx / z2),
        gj[(1, 2)] * (-fy / z2),
        gj[(0, 0)] * (-fx / z2)
            + gj[(0, 2)] * (2.0 * fx * t.x / z3)
            + gj[(1, 1)] * (-fy / z2)
            + gj[(1, 2)] * (2.0 * fy * t.y / z3),
    );
    gt.x += grad.mean_px[0] * fx / z;
    gt.y += grad.mean_px[1] * fy / z;
    gt.z += -grad.mean_px[0] * fx * t.x / z2 - grad.mean_px[1] * fy * t.y / z2;
    let mut gmean = rot.transpose() * gt;

    let v = g.mean - cam.center();
    let n = v.norm();
    let dir = v / n;
    let gdir = sh::eval_sh_backward(g.sh, &dir, &grad.color, grad_sh);
    gmean += (gdir - dir * dir.dot(&gdir)) / n;

    ProjectGrad {
        mean: gmean,
        cov: gcov3,
        opacity: grad.opacity,
    }
}
