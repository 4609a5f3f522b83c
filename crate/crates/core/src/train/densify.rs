use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::slots::{dynamic_len, static_len, Slot};
use super::TrainState;
use crate::gauss::{logit, GaussianCommon};
use crate::quat::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensifyReport {
    pub event: &'static str,
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub removed: usize,
}

/// Opacity that makes two stacked copies composite like one original.
pub fn clone_opacity(o: f64) -> f64 {
    1.0 - (1.0 - o).sqrt()
}

#[derive(Clone, Copy, PartialEq)]
enum Action {
    Keep,
    Clone,
    Split,
}

fn decide(slot: &Slot, common: &GaussianCommon, threshold: f64, size_limit: f64) -> Action {
    if slot.grad_count == 0 {
        return Action::Keep;
    }
    let mean = slot.grad_accum / slot.grad_count as f64;
    if mean < threshold {
        return Action::Keep;
    }
    if common.effective_scale().max() <= size_limit {
        Action::Clone
    } else {
        Action::Split
    }
}

fn split_common(c: &GaussianCommon) -> GaussianCommon {
    let mut out = c.clone();
    for s in &mut out.scale {
        *s -= 1.6f64.ln();
    }
    out
}

fn sample_offset(rng: &mut impl Rng, c: &GaussianCommon) -> Vec3 {
    let s = c.effective_scale();
    let local = Vec3::new(
        s.x * rng.sample::<f64, _>(StandardNormal),
        s.y * rng.sample::<f64, _>(StandardNormal),
        s.z * rng.sample::<f64, _>(StandardNormal),
    );
    c.rotation_base.to_rotation_matrix() * local
}

fn with_clone_opacity(c: &mut GaussianCommon) {
    c.opacity_base = logit(clone_opacity(c.opacity()));
}

/// Clones small high-gradient Gaussians, splits large ones into two and
/// removes nearly transparent ones. Screen-gradient statistics are reset.
pub fn densify_and_prune(state: &mut TrainState) -> DensifyReport {
    let cfg = &state.config;
    let threshold = cfg.densify_grad_threshold;
    let size_limit = cfg.percent_dense * state.extent;
    let mut budget = cfg.max_gaussians.saturating_sub(state.scene.len());
    let mut report = DensifyReport { event: "densify", iteration: state.iteration, cloned: 0, split: 0, removed: 0 };

    let statics = std::mem::take(&mut state.scene.statics);
    let slots = std::mem::take(&mut state.static_slots);
    let mut kept = Vec::with_capacity(statics.len());
    let mut kept_slots = Vec::with_capacity(statics.len());
    let mut born = Vec::new();
    for (mut g, slot) in statics.into_iter().zip(slots) {
        let action = if budget > 0 { decide(&slot, &g.common, threshold, size_limit) } else { Action::Keep };
        match action {
            Action::Keep => {
                kept.push(g);
                kept_slots.push(slot);
            }
            Action::Clone => {
                budget -= 1;
                report.cloned += 1;
                with_clone_opacity(&mut g.common);
                born.push(g.clone());
                kept.push(g);
                kept_slots.push(slot);
            }
            Action::Split => {
                budget -= 1;
                report.split += 1;
                for _ in 0..2 {
                    let off = sample_offset(&mut state.rng, &g.common);
                    let mut child = g.clone();
                    child.common = split_common(&g.common);
                    for k in 0..3 {
                        child.pivot[k] += off[k];
                    }
                    born.push(child);
                }
            }
        }
    }
    for g in born {
        kept_slots.push(Slot::zeros(static_len(g.common.sh_coeffs.len())));
        kept.push(g);
    }
    state.scene.statics = kept;
    state.static_slots = kept_slots;

    let dynamics = std::mem::take(&mut state.scene.dynamics);
    let slots = std::mem::take(&mut state.dynamic_slots);
    let mut kept = Vec::with_capacity(dynamics.len());
    let mut kept_slots = Vec::with_capacity(dynamics.len());
    let mut born = Vec::new();
    for (mut g, slot) in dynamics.into_iter().zip(slots) {
        let action = if budget > 0 { decide(&slot, &g.common, threshold, size_limit) } else { Action::Keep };
        match action {
            Action::Keep => {
                kept.push(g);
                kept_slots.push(slot);
            }
            Action::Clone => {
                budget -= 1;
                report.cloned += 1;
                with_clone_opacity(&mut g.common);
                born.push(g.clone());
                kept.push(g);
                kept_slots.push(slot);
            }
            Action::Split => {
                budget -= 1;
                report.split += 1;
                for _ in 0..2 {
                    let mut c = g.common.clone();
                    c.rotation_base = g.track.rotations[0];
                    let off = sample_offset(&mut state.rng, &c);
                    let mut child = g.clone();
                    child.common = split_common(&g.common);
                    for p in &mut child.track.positions {
                        for k in 0..3 {
                            p[k] += off[k];
                        }
                    }
                    born.push(child);
                }
            }
        }
    }
    for g in born {
        kept_slots.push(Slot::zeros(dynamic_len(g.common.sh_coeffs.len(), g.track.len())));
        kept.push(g);
    }
    state.scene.dynamics = kept;
    state.dynamic_slots = kept_slots;

    let min_opacity = state.config.min_opacity;
    let before = state.scene.len();
    let keep_s: Vec<bool> = state.scene.statics.iter().map(|g| g.common.opacity() >= min_opacity).collect();
    let keep_d: Vec<bool> = state.scene.dynamics.iter().map(|g| g.common.opacity() >= min_opacity).collect();
    state.retain(&keep_s, &keep_d);
    report.removed = before - state.scene.len();

    for s in state.static_slots.iter_mut().chain(state.dynamic_slots.iter_mut()) {
        s.clear_stats();
    }
    report
}
