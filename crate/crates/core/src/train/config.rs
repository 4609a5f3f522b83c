use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::exp_decay;

/// Every knob of a training run.
///
/// Learning rates follow the usual splatting defaults. Keyframe positions
/// and static translations share the position rate, keyframe rotations the
/// rotation rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub keyframe_interval: usize,
    pub initial_duration: usize,
    pub extend_every: usize,
    pub reg_static: f64,
    pub reg_dynamic: f64,
    pub eta_percent: f64,
    pub rho: usize,
    pub ssim_weight: f64,
    pub prune_kappa: f64,
    /// Absolute error floor below which backtracking never prunes.
    pub prune_min_error: f64,
    pub seed: u64,
    pub total_iterations: usize,
    /// Convert statics to dynamics at extensions and every `extract_every`.
    pub enable_extraction: bool,
    pub extract_every: usize,
    pub backtrack_every: usize,
    /// Backtracking prunes stop here so the last iterations can settle.
    pub backtrack_until: usize,
    pub sh_degree: usize,

    pub lr_position: f64,
    pub lr_position_final: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_sh: f64,
    pub lr_temporal: f64,

    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    pub densify_grad_threshold: f64,
    pub percent_dense: f64,
    pub min_opacity: f64,
    pub max_gaussians: usize,

    /// Metrics are logged every `log_every` iterations and whenever an event fires.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            keyframe_interval: 10,
            initial_duration: 10,
            extend_every: 400,
            reg_static: 1e-4,
            reg_dynamic: 1e-4,
            eta_percent: 2.0,
            rho: 3,
            ssim_weight: 0.2,
            prune_kappa: 2.0,
            prune_min_error: 0.1,
            seed: 0,
            total_iterations: 30_000,
            enable_extraction: true,
            extract_every: 2000,
            backtrack_every: 500,
            backtrack_until: 15_000,
            sh_degree: 1,
            lr_position: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_sh: 2.5e-3,
            lr_temporal: 5e-3,
            densify_from: 500,
            densify_until: 15_000,
            densify_every: 100,
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            min_opacity: 0.005,
            max_gaussians: 200_000,
            log_every: 100,
        }
    }
}

/// Parameter groups with their own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Position,
    Scale,
    Rotation,
    Opacity,
    ShDc,
    ShRest,
    Temporal,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let rates = [
            ("lr-position", self.lr_position),
            ("lr-position-final", self.lr_position_final),
            ("lr-opacity", self.lr_opacity),
            ("lr-scale", self.lr_scale),
            ("lr-rotation", self.lr_rotation),
            ("lr-sh", self.lr_sh),
            ("lr-temporal", self.lr_temporal),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.keyframe_interval == 0 {
            return bad("keyframe-interval must be at least 1".into());
        }
        if self.initial_duration < self.keyframe_interval {
            return bad(format!(
                "initial-duration ({}) must be at least keyframe-interval ({})",
                self.initial_duration, self.keyframe_interval
            ));
        }
        for (name, v) in [
            ("extend-every", self.extend_every),
            ("extract-every", self.extract_every),
            ("backtrack-every", self.backtrack_every),
            ("densify-every", self.densify_every),
            ("rho", self.rho),
            ("log-every", self.log_every),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.eta_percent > 0.0 && self.eta_percent < 100.0) {
            return bad(format!("eta-percent must lie in (0, 100), got {}", self.eta_percent));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return bad(format!("ssim-weight must lie in [0, 1], got {}", self.ssim_weight));
        }
        if !(self.prune_min_error >= 0.0) {
            return bad(format!("prune-min-error must be non-negative, got {}", self.prune_min_error));
        }
        if self.prune_kappa <= 0.0 {
            return bad(format!("prune-kappa must be positive, got {}", self.prune_kappa));
        }
        if self.densify_from > self.densify_until {
            return bad("densify-from must not exceed densify-until".into());
        }
        if self.sh_degree > 3 {
            return bad(format!("sh-degree must be at most 3, got {}", self.sh_degree));
        }
        Ok(())
    }

    /// A schedule compressed into `total_iterations` for small scenes.
    ///
    /// The window reaches `total_frames` after about 40% of the run, and
    /// densification and backtracking stop at 80%. The final position rate
    /// is ten times the default because the decay otherwise freezes
    /// keyframes before the last extensions have settled. The gradient
    /// threshold is raised for images of a few thousand pixels.
    pub fn short_run(total_iterations: usize, keyframe_interval: usize, total_frames: usize) -> Self {
        let initial_duration = keyframe_interval.max(10);
        let extensions = total_frames.saturating_sub(initial_duration).div_ceil(keyframe_interval).max(1);
        let late = total_iterations * 4 / 5;
        TrainConfig {
            keyframe_interval,
            initial_duration,
            total_iterations,
            extend_every: (total_iterations * 2 / (5 * extensions)).max(1),
            extract_every: (total_iterations / 6).max(1),
            backtrack_every: (total_iterations / 12).max(1),
            backtrack_until: late,
            densify_from: 200.min(total_iterations / 10),
            densify_until: late,
            densify_every: 100,
            densify_grad_threshold: 2e-3,
            lr_position_final: 1.6e-5,
            log_every: (total_iterations / 10).max(1),
            ..Default::default()
        }
    }

    /// Learning rate of `group` at `iteration`; positions are scaled by the
    /// scene extent and decay log-linearly over the run.
    pub fn learning_rate(&self, group: Group, iteration: usize, extent: f64) -> f64 {
        match group {
            Group::Position => {
                extent * exp_decay(self.lr_position, self.lr_position_final, iteration, self.total_iterations)
            }
            Group::Scale => self.lr_scale,
            Group::Rotation => self.lr_rotation,
            Group::Opacity => self.lr_opacity,
            Group::ShDc => self.lr_sh,
            Group::ShRest => self.lr_sh / 20.0,
            Group::Temporal => self.lr_temporal,
        }
    }

    /// Iterations at which the training window grows, with the new duration.
    pub fn extension_schedule(&self, total_frames: usize) -> Vec<(usize, usize)> {
        let mut duration = self.initial_duration.min(total_frames);
        let mut out = Vec::new();
        let mut it = 0;
        while duration < total_frames {
            it += self.extend_every;
            duration = (duration + self.keyframe_interval).min(total_frames);
            out.push((it, duration));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_short_initial_duration() {
        let cfg = TrainConfig { initial_duration: 5, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_zero_rates() {
        let cfg = TrainConfig { lr_opacity: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_reaches_three_hundred_at_11600() {
        let s = TrainConfig::default().extension_schedule(300);
        assert_eq!(s.len(), 29);
        assert_eq!(*s.last().unwrap(), (11_600, 300));
    }

    #[test]
    fn short_run_reaches_full_duration_early() {
        for (iters, interval) in [(6000, 10), (6000, 5), (6000, 50), (300, 10)] {
            let cfg = TrainConfig::short_run(iters, interval, 60);
            cfg.validate().unwrap();
            let (last, dur) = *cfg.extension_schedule(60).last().unwrap();
            assert_eq!(dur, 60);
            assert!(last <= iters / 2, "{iters} {interval}: {last}");
        }
    }

    #[test]
    fn schedule_ends_with_partial_step() {
        let cfg = TrainConfig { keyframe_interval: 50, initial_duration: 50, ..Default::default() };
        assert_eq!(cfg.extension_schedule(60), vec![(400, 60)]);
    }
}
