//! Temporal interpolators and their analytic derivatives.
//!
//! Every evaluator here is a pure function. Keyframe positions use a cubic
//! Hermite spline whose tangents are central differences of the neighbouring
//! keyframes (a uniform Catmull-Rom spline), rotations use spherical linear
//! interpolation, and visibility uses a two-sided Gaussian with a plateau.

use crate::error::{Error, Result};
use crate::gauss::{KeyframeTrack, StaticGaussian, TemporalOpacity};
use crate::quat::Quat;

/// Below this `sin Ω` slerp falls back to a normalized lerp.
pub const SLERP_EPS: f64 = 1e-6;

/// A timestamp resolved against the current duration and keyframe grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeQuery {
    /// Time in frames. Integer for dataset frames, fractional in analysis.
    pub frame: f64,
    /// `frame / duration`.
    pub normalized: f64,
    /// Keyframe index `floor(frame / interval)`.
    pub segment: usize,
    /// Position inside the segment, in `[0, 1]`.
    pub local: f64,
}

impl TimeQuery {
    pub fn at(frame: usize, duration: usize, interval: usize) -> Self {
        Self::at_time(frame as f64, duration, interval)
    }

    pub fn at_time(frame: f64, duration: usize, interval: usize) -> Self {
        let i = interval as f64;
        let segment = (frame / i).floor().max(0.0) as usize;
        let local = ((frame - segment as f64 * i) / i).clamp(0.0, 1.0);
        TimeQuery {
            frame,
            normalized: frame / duration as f64,
            segment,
            local,
        }
    }

    /// Segment and local coordinate clamped into a track of `len` keyframes.
    /// The final keyframe is addressed as the end of the last segment.
    fn resolve(&self, len: usize, interval: usize) -> Result<(usize, f64)> {
        let span = len.saturating_sub(1) * interval;
        if len < 2 || self.frame > span as f64 + 1e-9 || self.frame < 0.0 {
            return Err(Error::OutOfRange {
                frame: self.frame.max(0.0) as usize,
                limit: span,
            });
        }
        if self.segment + 1 >= len {
            Ok((len - 2, 1.0))
        } else {
            Ok((self.segment, self.local))
        }
    }
}

pub fn static_position(g: &StaticGaussian, q: &TimeQuery) -> [f64; 3] {
    let t = q.normalized;
    std::array::from_fn(|k| g.pivot[k] + t * g.translation[k])
}

/// Pulls `dL/dμ` back to `(dL/dpivot, dL/dtranslation)`.
pub fn static_position_backward(q: &TimeQuery, grad: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    (*grad, grad.map(|g| g * q.normalized))
}

/// Hermite basis `[h00, h10, h01, h11]` at `t`.
pub fn hermite_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ]
}

/// Cubic Hermite interpolation on the unit interval.
pub fn chip(p0: &[f64; 3], m0: &[f64; 3], p1: &[f64; 3], m1: &[f64; 3], t: f64) -> [f64; 3] {
    let [h00, h10, h01, h11] = hermite_basis(t);
    std::array::from_fn(|k| h00 * p0[k] + h10 * m0[k] + h01 * p1[k] + h11 * m1[k])
}

/// Tangent at keyframe `n` expressed per segment (i.e. already multiplied by
/// the interval), as weights over keyframe indices.
fn tangent_weights(len: usize, n: usize) -> [(usize, f64); 2] {
    if n == 0 {
        [(1, 1.0), (0, -1.0)]
    } else if n + 1 == len {
        [(n, 1.0), (n - 1, -1.0)]
    } else {
        [(n + 1, 0.5), (n - 1, -0.5)]
    }
}

/// The interpolated position is linear in the keyframe positions; these are
/// its coefficients, at most four distinct keyframes `n-1 ..= n+2`.
pub fn track_position_weights(len: usize, segment: usize, local: f64) -> Vec<(usize, f64)> {
    let [h00, h10, h01, h11] = hermite_basis(local);
    let mut acc: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut add = |idx: usize, w: f64| match acc.iter_mut().find(|(i, _)| *i == idx) {
        Some(e) => e.1 += w,
        None => acc.push((idx, w)),
    };
    add(segment, h00);
    add(segment + 1, h01);
    for (idx, w) in tangent_weights(len, segment) {
        add(idx, h10 * w);
    }
    for (idx, w) in tangent_weights(len, segment + 1) {
        add(idx, h11 * w);
    }
    acc.sort_by_key(|e| e.0);
    acc
}

/// Keyframed position at `q`.
///
/// Tangents are `m_n = (p_{n+1} − p_{n−1}) / (2I)` per frame; multiplied by
/// the segment length `I` they become unit-interval Hermite tangents. The end
/// keyframes use one-sided differences.
pub fn track_position(track: &KeyframeTrack, q: &TimeQuery) -> Result<[f64; 3]> {
    let (segment, local) = q.resolve(track.len(), track.interval)?;
    let mut out = [0.0; 3];
    for (idx, w) in track_position_weights(track.len(), segment, local) {
        for k in 0..3 {
            out[k] += w * track.positions[idx][k];
        }
    }
    Ok(out)
}

/// Scatters `dL/dμ` onto the keyframe positions that influence `q`.
pub fn track_position_backward(
    track: &KeyframeTrack,
    q: &TimeQuery,
    grad: &[f64; 3],
    out: &mut [[f64; 3]],
) -> Result<()> {
    let (segment, local) = q.resolve(track.len(), track.interval)?;
    for (idx, w) in track_position_weights(track.len(), segment, local) {
        for k in 0..3 {
            out[idx][k] += w * grad[k];
        }
    }
    Ok(())
}

/// Spherical linear interpolation. Inputs are expected on the same
/// hemisphere; if not, `x1` is negated so the short arc is taken.
pub fn slerp(x0: &Quat, x1: &Quat, t: f64) -> Quat {
    let x1 = x0.aligned(x1);
    let cos = x0.dot(&x1);
    let omega = cos.clamp(-1.0, 1.0).acos();
    let sin = omega.sin();
    if sin < SLERP_EPS {
        return x0.scale(1.0 - t).add(&x1.scale(t)).normalized();
    }
    let a = ((1.0 - t) * omega).sin() / sin;
    let b = (t * omega).sin() / sin;
    x0.scale(a).add(&x1.scale(b))
}

/// Pulls `dL/dslerp` back to `(dL/dx0, dL/dx1)`.
pub fn slerp_backward(x0: &Quat, x1_raw: &Quat, t: f64, grad: &[f64; 4]) -> ([f64; 4], [f64; 4]) {
    let flip = x0.dot(x1_raw) < 0.0;
    let x1 = if flip { x1_raw.neg() } else { *x1_raw };
    let g = Quat(*grad);
    let cos = x0.dot(&x1);
    let omega = cos.clamp(-1.0, 1.0).acos();
    let sin = omega.sin();

    let (g0, g1) = if sin < SLERP_EPS {
        // out = v / |v| with v = (1-t) x0 + t x1
        let v = x0.scale(1.0 - t).add(&x1.scale(t));
        let n = v.norm();
        let u = v.scale(1.0 / n);
        let gv = g.add(&u.scale(-u.dot(&g))).scale(1.0 / n);
        (gv.scale(1.0 - t), gv.scale(t))
    } else {
        let sa = ((1.0 - t) * omega).sin();
        let sb = (t * omega).sin();
        let a = sa / sin;
        let b = sb / sin;
        // da/dΩ and db/dΩ
        let cos_o = omega.cos();
        let da = ((1.0 - t) * ((1.0 - t) * omega).cos() * sin - sa * cos_o) / (sin * sin);
        let db = (t * (t * omega).cos() * sin - sb * cos_o) / (sin * sin);
        let g_omega = g.dot(x0) * da + g.dot(&x1) * db;
        // dΩ/dcos = -1/sinΩ
        let g_cos = -g_omega / sin;
        (g.scale(a).add(&x1.scale(g_cos)), g.scale(b).add(&x0.scale(g_cos)))
    };
    let g1 = if flip { g1.neg() } else { g1 };
    (g0.0, g1.0)
}

/// Keyframed rotation at `q`: slerp between the bracketing keyframes.
pub fn track_rotation(track: &KeyframeTrack, q: &TimeQuery) -> Result<Quat> {
    let (segment, local) = q.resolve(track.len(), track.interval)?;
    Ok(slerp(&track.rotations[segment], &track.rotations[segment + 1], local))
}

pub fn track_rotation_backward(
    track: &KeyframeTrack,
    q: &TimeQuery,
    grad: &[f64; 4],
    out: &mut [[f64; 4]],
) -> Result<()> {
    let (segment, local) = q.resolve(track.len(), track.interval)?;
    let (g0, g1) = slerp_backward(&track.rotations[segment], &track.rotations[segment + 1], local, grad);
    for k in 0..4 {
        out[segment][k] += g0[k];
        out[segment + 1][k] += g1[k];
    }
    Ok(())
}

/// Visibility over normalized time: 1 on `[a_s, a_f]`, Gaussian falloff
/// outside.
pub fn temporal_opacity(o: &TemporalOpacity, t: f64) -> f64 {
    if t < o.a_s {
        let u = (t - o.a_s) / o.b_s();
        (-u * u).exp()
    } else if t > o.a_f {
        let u = (t - o.a_f) / o.b_f();
        (-u * u).exp()
    } else {
        1.0
    }
}

/// Derivatives of [`temporal_opacity`] w.r.t. `[a_s, log_b_s, a_f, log_b_f]`.
/// Breakpoints take the plateau branch (zero derivative).
pub fn temporal_opacity_grad(o: &TemporalOpacity, t: f64) -> [f64; 4] {
    if t < o.a_s {
        let b = o.b_s();
        let u = (t - o.a_s) / b;
        let v = (-u * u).exp();
        [2.0 * v * u / b, 2.0 * v * u * u, 0.0, 0.0]
    } else if t > o.a_f {
        let b = o.b_f();
        let u = (t - o.a_f) / b;
        let v = (-u * u).exp();
        [0.0, 0.0, 2.0 * v * u / b, 2.0 * v * u * u]
    } else {
        [0.0; 4]
    }
}
