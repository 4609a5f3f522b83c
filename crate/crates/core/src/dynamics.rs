//! Static → dynamic lifecycle: motion scoring, extraction, keyframe
//! expansion when the training window grows, and error-driven pruning.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{
    required_keyframes, Camera, DynamicGaussian, KeyframeTrack, Population, SceneModel, SourceId,
    TemporalOpacity, MIN_TEMPORAL_WIDTH,
};
use crate::interp::{self, TimeQuery};
use crate::quat::{v3, Quat};

/// Default number of trailing keyframes used for extrapolation.
pub const DEFAULT_RHO: usize = 3;
/// Default prune threshold as a multiple of the median error.
pub const DEFAULT_KAPPA: f64 = 2.0;
/// Largest fraction of a population removed by one prune.
pub const PRUNE_CAP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionScore {
    /// Index into `scene.statics`.
    pub gaussian_id: usize,
    pub score: f64,
}

/// The camera whose center is nearest the centroid of the Gaussians at frame 0.
/// Ties go to the earlier camera.
pub fn reference_camera<'a>(scene: &SceneModel, cameras: &'a [Camera]) -> Option<&'a Camera> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for g in &scene.statics {
        for k in 0..3 {
            sum[k] += g.pivot[k];
        }
        n += 1;
    }
    for g in &scene.dynamics {
        if let Some(p) = g.track.positions.first() {
            for k in 0..3 {
                sum[k] += p[k];
            }
            n += 1;
        }
    }
    let centroid = v3(sum.map(|s| s / n.max(1) as f64));
    let mut best: Option<(&Camera, f64)> = None;
    for cam in cameras {
        let d = (cam.center() - centroid).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((cam, d));
        }
    }
    best.map(|(c, _)| c)
}

/// Image-space motion proxy `‖d‖ / λ²` for every static Gaussian, where `λ`
/// is its distance to `reference` at the last frame of the current duration.
pub fn score_motion(scene: &SceneModel, reference: &Camera) -> Result<Vec<MotionScore>> {
    let last = scene.duration_frames.saturating_sub(1);
    let q = TimeQuery::at(last, scene.duration_frames.max(1), scene.keyframe_interval.max(1));
    let center = reference.center();
    scene
        .statics
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let pos = v3(interp::static_position(g, &q));
            let lambda = (pos - center).norm();
            if lambda < 1e-6 {
                return Err(Error::DegenerateGeometry(format!(
                    "static Gaussian {i} lies {lambda:e} from the reference camera"
                )));
            }
            Ok(MotionScore { gaussian_id: i, score: v3(g.translation).norm() / (lambda * lambda) })
        })
        .collect()
}

/// Outcome of one extraction event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConversionReport {
    pub event: &'static str,
    pub iteration: Option<usize>,
    pub eta_percent: f64,
    pub candidates: usize,
    pub converted: usize,
    /// Lowest score that was converted.
    pub threshold: Option<f64>,
    /// Former static indices, ascending. The new dynamics were appended in
    /// this order.
    pub converted_ids: Vec<usize>,
}

impl ConversionReport {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Converts the top `eta_percent` of statics by score into keyframed
/// dynamic Gaussians following their linear motion.
pub fn extract_dynamic(
    scene: &mut SceneModel,
    scores: &[MotionScore],
    eta_percent: f64,
) -> Result<ConversionReport> {
    if !(eta_percent > 0.0 && eta_percent < 100.0) {
        return Err(Error::Config(format!("eta_percent must lie in (0, 100), got {eta_percent}")));
    }
    let count = ((scores.len() as f64) * eta_percent / 100.0).floor() as usize;
    let mut ranked: Vec<MotionScore> = scores.to_vec();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.gaussian_id.cmp(&b.gaussian_id)));
    ranked.truncate(count);
    let threshold = ranked.last().map(|s| s.score);
    let mut ids: Vec<usize> = ranked.iter().map(|s| s.gaussian_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.iter().any(|&i| i >= scene.statics.len()) {
        return Err(Error::State("motion score refers to a missing static"));
    }

    let l = scene.duration_frames as f64;
    let interval = scene.keyframe_interval;
    let n_key = scene.required_keyframes();
    let width = interval as f64 / l;
    let mut converted = Vec::with_capacity(ids.len());
    for &i in &ids {
        let g = &scene.statics[i];
        let positions = (0..n_key)
            .map(|n| {
                let t = (n * interval) as f64 / l;
                std::array::from_fn(|k| g.pivot[k] + t * g.translation[k])
            })
            .collect();
        let rot = g.common.rotation_base.normalized();
        converted.push(DynamicGaussian {
            common: g.common.clone(),
            track: KeyframeTrack { positions, rotations: vec![rot; n_key], interval },
            temporal_opacity: TemporalOpacity::new(0.0, width, 1.0, width),
        });
    }
    let mut keep = vec![true; scene.statics.len()];
    for &i in &ids {
        keep[i] = false;
    }
    let mut k = keep.iter();
    scene.statics.retain(|_| *k.next().unwrap());
    scene.dynamics.extend(converted);

    Ok(ConversionReport {
        event: "extract",
        iteration: None,
        eta_percent,
        candidates: scores.len(),
        converted: ids.len(),
        threshold,
        converted_ids: ids,
    })
}

/// Least-squares line through `ys` at `x = 0, 1, …`, evaluated at `x = ys.len()`.
fn extrapolate(ys: &[f64]) -> f64 {
    let m = ys.len();
    if m == 1 {
        return ys[0];
    }
    let mf = m as f64;
    let x_mean = (mf - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / mf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    y_mean + sxy / sxx * (mf - x_mean)
}

/// Appends one keyframe extrapolated from the last `rho` keyframes.
pub fn extend_track(track: &mut KeyframeTrack, rho: usize) {
    let n = track.len();
    let m = rho.max(1).min(n);
    let tail = &track.positions[n - m..];
    let pos = std::array::from_fn(|k| extrapolate(&tail.iter().map(|p| p[k]).collect::<Vec<_>>()));
    let last = track.rotations[n - 1];
    let rots: Vec<Quat> = track.rotations[n - m..].iter().map(|r| last.aligned(r)).collect();
    let raw = Quat(std::array::from_fn(|k| extrapolate(&rots.iter().map(|r| r.0[k]).collect::<Vec<_>>())));
    let rot = if raw.norm() > 1e-12 { last.aligned(&raw.normalized()) } else { last };
    track.positions.push(pos);
    track.rotations.push(rot);
}

/// Grows the training window to `new_duration` frames.
///
/// Tracks gain the keyframes the new window needs. Statics and temporal
/// opacities are stored in normalized time, so they are rescaled to keep
/// their meaning in absolute frames. A plateau that already reached the last
/// frame stays open to the new end.
pub fn expand_duration(scene: &mut SceneModel, new_duration: usize, rho: usize) -> Result<()> {
    if new_duration > scene.total_frames {
        return Err(Error::Capacity { requested: new_duration, capacity: scene.total_frames });
    }
    let old = scene.duration_frames;
    if new_duration <= old || new_duration > old + scene.keyframe_interval {
        return Err(Error::Config(format!(
            "duration can grow by at most one interval ({}), from {old} to {new_duration} requested",
            scene.keyframe_interval
        )));
    }
    let need = required_keyframes(new_duration, scene.keyframe_interval);
    let grow = new_duration as f64 / old as f64;
    let shrink = old as f64 / new_duration as f64;
    let floor = MIN_TEMPORAL_WIDTH.ln();
    for g in &mut scene.statics {
        g.translation = g.translation.map(|d| d * grow);
    }
    for g in &mut scene.dynamics {
        while g.track.len() < need {
            extend_track(&mut g.track, rho);
        }
        let o = &mut g.temporal_opacity;
        let open = o.a_f * old as f64 >= (old - 1) as f64;
        o.a_s *= shrink;
        o.a_f = if open { o.a_f.max(1.0) } else { o.a_f * shrink };
        o.log_b_s = (o.log_b_s + shrink.ln()).max(floor);
        o.log_b_f = (o.log_b_f + shrink.ln()).max(floor);
    }
    scene.duration_frames = new_duration;
    Ok(())
}

/// Mean backtracked error of one Gaussian over the views where it was seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruneRecord {
    pub source: SourceId,
    pub e_total: f64,
    pub views_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub event: &'static str,
    pub iteration: Option<usize>,
    pub kappa: f64,
    pub min_error: f64,
    pub median: Option<f64>,
    pub threshold: Option<f64>,
    pub candidates: usize,
    pub pruned_static: usize,
    pub pruned_dynamic: usize,
    /// True when the per-population cap held back some candidates.
    pub capped: bool,
    pub removed: Vec<SourceId>,
}

impl PruneReport {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Removes Gaussians whose error exceeds both `kappa × median` and
/// `min_error`.
///
/// The median is taken over Gaussians that stay, so it is recomputed until
/// the surviving set is stable. At most `floor(10%)` of each population is
/// removed; when the cap binds, the worst candidates go first.
pub fn prune_by_backtracking(scene: &mut SceneModel, records: &[PruneRecord], kappa: f64, min_error: f64) -> PruneReport {
    let visible: Vec<&PruneRecord> = records
        .iter()
        .filter(|r| r.views_seen >= 1 && r.e_total.is_finite())
        .filter(|r| match r.source.population {
            Population::Static => r.source.index < scene.statics.len(),
            Population::Dynamic => r.source.index < scene.dynamics.len(),
        })
        .collect();
    let mut report = PruneReport {
        event: "prune",
        iteration: None,
        kappa,
        min_error,
        median: None,
        threshold: None,
        candidates: 0,
        pruned_static: 0,
        pruned_dynamic: 0,
        capped: false,
        removed: Vec::new(),
    };
    if visible.is_empty() {
        return report;
    }

    let mut keep = vec![true; visible.len()];
    let (med, threshold) = loop {
        let mut kept: Vec<f64> = visible.iter().zip(&keep).filter(|(_, k)| **k).map(|(r, _)| r.e_total).collect();
        kept.sort_by(f64::total_cmp);
        let med = median(&kept);
        let threshold = (kappa * med).max(min_error);
        let mut changed = false;
        for (r, k) in visible.iter().zip(keep.iter_mut()) {
            if *k && r.e_total > threshold {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break (med, threshold);
        }
    };
    report.median = Some(med);
    report.threshold = Some(threshold);

    let mut candidates: Vec<&PruneRecord> =
        visible.iter().zip(&keep).filter(|(_, k)| !**k).map(|(r, _)| *r).collect();
    report.candidates = candidates.len();
    candidates.sort_by(|a, b| b.e_total.total_cmp(&a.e_total).then(a.source.cmp(&b.source)));

    let cap_s = (scene.statics.len() as f64 * PRUNE_CAP).floor() as usize;
    let cap_d = (scene.dynamics.len() as f64 * PRUNE_CAP).floor() as usize;
    let mut removed = Vec::new();
    for r in candidates {
        let (count, cap) = match r.source.population {
            Population::Static => (&mut report.pruned_static, cap_s),
            Population::Dynamic => (&mut report.pruned_dynamic, cap_d),
        };
        if *count < cap {
            *count += 1;
            removed.push(r.source);
        } else {
            report.capped = true;
        }
    }
    removed.sort();
    removed.dedup();
    remove_gaussians(scene, &removed);
    report.removed = removed;
    report
}

/// Deletes the listed Gaussians, preserving the order of the rest.
pub fn remove_gaussians(scene: &mut SceneModel, ids: &[SourceId]) {
    let (ks, kd) = keep_masks(scene.statics.len(), scene.dynamics.len(), ids);
    let mut it = ks.iter();
    scene.statics.retain(|_| *it.next().unwrap());
    let mut it = kd.iter();
    scene.dynamics.retain(|_| *it.next().unwrap());
}

/// Per-population keep flags for removing `ids`.
pub fn keep_masks(n_static: usize, n_dynamic: usize, ids: &[SourceId]) -> (Vec<bool>, Vec<bool>) {
    let mut ks = vec![true; n_static];
    let mut kd = vec![true; n_dynamic];
    for id in ids {
        match id.population {
            Population::Static => ks[id.index] = false,
            Population::Dynamic => kd[id.index] = false,
        }
    }
    (ks, kd)
}
