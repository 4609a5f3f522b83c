//! Flat parameter layouts and the per-Gaussian optimizer state that
//! mirrors them.
//!
//! Static: `pivot(3) translation(3) scale(3) rotation(4) opacity(1) sh(K)`.
//! Dynamic: `scale(3) opacity(1) temporal(4) sh(K)` followed by
//! `position(3) rotation(4)` per keyframe, so a grown track only appends.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::Group;
use crate::gauss::{DynamicGaussian, StaticGaussian};
use crate::optim::RadamStep;
use crate::quat::Quat;
use crate::render::{DynamicGrad, StaticGrad};

pub const KEYFRAME_STRIDE: usize = 7;

/// Optimizer moments and auxiliary accumulators of one Gaussian.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Sum of NDC-scaled screen-space gradient norms.
    pub grad_accum: f64,
    pub grad_count: u32,
    /// Sum of backtracked errors over views where the Gaussian was visible.
    pub err_sum: f64,
    pub err_views: u32,
}

impl Slot {
    pub fn zeros(n: usize) -> Self {
        Slot { m: vec![0.0; n], v: vec![0.0; n], ..Default::default() }
    }

    pub fn grow(&mut self, n: usize) {
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }

    pub fn clear_stats(&mut self) {
        self.grad_accum = 0.0;
        self.grad_count = 0;
    }

    pub fn clear_errors(&mut self) {
        self.err_sum = 0.0;
        self.err_views = 0;
    }
}

pub fn static_len(sh: usize) -> usize {
    14 + sh
}

pub fn dynamic_len(sh: usize, keyframes: usize) -> usize {
    8 + sh + KEYFRAME_STRIDE * keyframes
}

fn sh_groups(start: usize, sh: usize, out: &mut Vec<(Range<usize>, Group)>) {
    out.push((start..start + sh.min(3), Group::ShDc));
    if sh > 3 {
        out.push((start + 3..start + sh, Group::ShRest));
    }
}

pub fn static_groups(sh: usize) -> Vec<(Range<usize>, Group)> {
    let mut g = vec![
        (0..6, Group::Position),
        (6..9, Group::Scale),
        (9..13, Group::Rotation),
        (13..14, Group::Opacity),
    ];
    sh_groups(14, sh, &mut g);
    g
}

pub fn dynamic_groups(sh: usize, keyframes: usize) -> Vec<(Range<usize>, Group)> {
    let mut g = vec![(0..3, Group::Scale), (3..4, Group::Opacity), (4..8, Group::Temporal)];
    sh_groups(8, sh, &mut g);
    let base = 8 + sh;
    for n in 0..keyframes {
        let s = base + KEYFRAME_STRIDE * n;
        g.push((s..s + 3, Group::Position));
        g.push((s + 3..s + 7, Group::Rotation));
    }
    g
}

pub fn pack_static(g: &StaticGaussian) -> Vec<f64> {
    let c = &g.common;
    let mut p = Vec::with_capacity(static_len(c.sh_coeffs.len()));
    p.extend_from_slice(&g.pivot);
    p.extend_from_slice(&g.translation);
    p.extend_from_slice(&c.scale);
    p.extend_from_slice(&c.rotation_base.0);
    p.push(c.opacity_base);
    p.extend_from_slice(&c.sh_coeffs);
    p
}

pub fn unpack_static(g: &mut StaticGaussian, p: &[f64]) {
    g.pivot.copy_from_slice(&p[0..3]);
    g.translation.copy_from_slice(&p[3..6]);
    g.common.scale.copy_from_slice(&p[6..9]);
    g.common.rotation_base = Quat([p[9], p[10], p[11], p[12]]);
    g.common.opacity_base = p[13];
    g.common.sh_coeffs.copy_from_slice(&p[14..]);
}

pub fn pack_static_grad(g: &StaticGrad) -> Vec<f64> {
    let c = &g.common;
    let mut p = Vec::with_capacity(static_len(c.sh.len()));
    p.extend_from_slice(&g.pivot);
    p.extend_from_slice(&g.translation);
    p.extend_from_slice(&c.scale);
    p.extend_from_slice(&c.rotation);
    p.push(c.opacity);
    p.extend_from_slice(&c.sh);
    p
}

pub fn pack_dynamic(g: &DynamicGaussian) -> Vec<f64> {
    let c = &g.common;
    let o = &g.temporal_opacity;
    let mut p = Vec::with_capacity(dynamic_len(c.sh_coeffs.len(), g.track.len()));
    p.extend_from_slice(&c.scale);
    p.push(c.opacity_base);
    p.extend_from_slice(&[o.a_s, o.log_b_s, o.a_f, o.log_b_f]);
    p.extend_from_slice(&c.sh_coeffs);
    for (pos, rot) in g.track.positions.iter().zip(&g.track.rotations) {
        p.extend_from_slice(pos);
        p.extend_from_slice(&rot.0);
    }
    p
}

pub fn unpack_dynamic(g: &mut DynamicGaussian, p: &[f64]) {
    g.common.scale.copy_from_slice(&p[0..3]);
    g.common.opacity_base = p[3];
    let o = &mut g.temporal_opacity;
    (o.a_s, o.log_b_s, o.a_f, o.log_b_f) = (p[4], p[5], p[6], p[7]);
    let sh = g.common.sh_coeffs.len();
    g.common.sh_coeffs.copy_from_slice(&p[8..8 + sh]);
    for (n, chunk) in p[8 + sh..].chunks_exact(KEYFRAME_STRIDE).enumerate() {
        g.track.positions[n] = [chunk[0], chunk[1], chunk[2]];
        g.track.rotations[n] = Quat([chunk[3], chunk[4], chunk[5], chunk[6]]);
    }
}

pub fn pack_dynamic_grad(g: &DynamicGrad) -> Vec<f64> {
    let c = &g.common;
    let mut p = Vec::with_capacity(dynamic_len(c.sh.len(), g.positions.len()));
    p.extend_from_slice(&c.scale);
    p.push(c.opacity);
    p.extend_from_slice(&g.temporal);
    p.extend_from_slice(&c.sh);
    for (pos, rot) in g.positions.iter().zip(&g.rotations) {
        p.extend_from_slice(pos);
        p.extend_from_slice(rot);
    }
    p
}

/// One optimizer update of a packed parameter vector.
pub fn apply_groups(
    step: &RadamStep,
    params: &mut [f64],
    grads: &[f64],
    slot: &mut Slot,
    groups: &[(Range<usize>, Group)],
    lr: impl Fn(Group) -> f64,
) {
    for (range, group) in groups {
        let r = range.clone();
        step.apply(&mut params[r.clone()], &grads[r.clone()], &mut slot.m[r.clone()], &mut slot.v[r], lr(*group));
    }
}
