//! Progressive training.
//!
//! A run starts on the first `initial_duration` frames and widens the window
//! by one keyframe interval every `extend_every` iterations. Around each
//! widening the trainer converts fast-moving statics to dynamics, densifies
//! on the usual splatting schedule and prunes Gaussians with outlying
//! backtracked error.

mod config;
mod densify;
mod loss;
mod slots;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::{Group, TrainConfig};
pub use densify::{clone_opacity, densify_and_prune, DensifyReport};
pub use loss::{loss, regularization, regularization_backward, LossOutput, ERROR_MAP_L1_WEIGHT};
pub use slots::{
    dynamic_groups, dynamic_len, pack_dynamic, pack_dynamic_grad, pack_static, pack_static_grad, static_groups, static_len, unpack_dynamic,
    unpack_static, Slot,
};

use crate::dynamics::{self, ConversionReport, PruneRecord, PruneReport};
use crate::error::{Error, Result};
use crate::gauss::{Camera, Population, SceneModel, SourceId};
use crate::img::Image;
use crate::metrics::psnr;
use crate::optim::RadamConfig;
use crate::render::{backward_frame, render_frame, RasterSettings};

/// Ground-truth images for the training cameras over every frame.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub cameras: Vec<Camera>,
    pub total_frames: usize,
    /// `images[c * total_frames + t]`.
    images: Vec<Image>,
}

impl TrainingSet {
    pub fn new(cameras: Vec<Camera>, total_frames: usize, images: Vec<Image>) -> Result<Self> {
        if cameras.is_empty() || total_frames == 0 {
            return Err(Error::Config("a training set needs at least one camera and one frame".into()));
        }
        if images.len() != cameras.len() * total_frames {
            return Err(Error::shape(cameras.len() * total_frames, images.len()));
        }
        for (i, img) in images.iter().enumerate() {
            let cam = &cameras[i / total_frames];
            if img.width != cam.width || img.height != cam.height {
                return Err(Error::shape(
                    format!("{}x{}", cam.width, cam.height),
                    format!("{}x{}", img.width, img.height),
                ));
            }
        }
        Ok(TrainingSet { cameras, total_frames, images })
    }

    pub fn image(&self, camera: usize, frame: usize) -> &Image {
        &self.images[camera * self.total_frames + frame]
    }

    /// Radius of the camera rig, padded by 10%.
    pub fn extent(&self) -> f64 {
        let n = self.cameras.len() as f64;
        let center = self.cameras.iter().map(|c| c.center()).sum::<crate::quat::Vec3>() / n;
        let radius = self.cameras.iter().map(|c| (c.center() - center).norm()).fold(0.0, f64::max);
        let r = 1.1 * radius;
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub scene: SceneModel,
    pub config: TrainConfig,
    /// Completed steps.
    pub iteration: usize,
    pub static_slots: Vec<Slot>,
    pub dynamic_slots: Vec<Slot>,
    pub extent: f64,
    pub settings: RasterSettings,
    pub rng: ChaCha8Rng,
    pub optimizer: RadamConfig,
}

impl TrainState {
    pub fn new(scene: SceneModel, config: TrainConfig, extent: f64) -> Self {
        let static_slots = scene.statics.iter().map(|g| Slot::zeros(static_len(g.common.sh_coeffs.len()))).collect();
        let dynamic_slots = scene
            .dynamics
            .iter()
            .map(|g| Slot::zeros(dynamic_len(g.common.sh_coeffs.len(), g.track.len())))
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        TrainState {
            scene,
            config,
            iteration: 0,
            static_slots,
            dynamic_slots,
            extent,
            settings: RasterSettings::default(),
            rng,
            optimizer: RadamConfig::default(),
        }
    }

    /// True when every Gaussian has a slot whose moments match its layout.
    pub fn optimizer_consistent(&self) -> bool {
        self.static_slots.len() == self.scene.statics.len()
            && self.dynamic_slots.len() == self.scene.dynamics.len()
            && self.scene.statics.iter().zip(&self.static_slots).all(|(g, s)| {
                let n = static_len(g.common.sh_coeffs.len());
                s.m.len() == n && s.v.len() == n
            })
            && self.scene.dynamics.iter().zip(&self.dynamic_slots).all(|(g, s)| {
                let n = dynamic_len(g.common.sh_coeffs.len(), g.track.len());
                s.m.len() == n && s.v.len() == n
            })
    }

    /// Keeps the Gaussians (and slots) flagged `true`.
    pub fn retain(&mut self, keep_static: &[bool], keep_dynamic: &[bool]) {
        fn filter<T>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filter(&mut self.scene.statics, keep_static);
        filter(&mut self.static_slots, keep_static);
        filter(&mut self.scene.dynamics, keep_dynamic);
        filter(&mut self.dynamic_slots, keep_dynamic);
    }

    /// Widens the window by up to one interval and grows the moments of
    /// every track accordingly.
    pub fn extend(&mut self) -> Result<usize> {
        let target = (self.scene.duration_frames + self.scene.keyframe_interval).min(self.scene.total_frames);
        dynamics::expand_duration(&mut self.scene, target, self.config.rho)?;
        for (g, s) in self.scene.dynamics.iter().zip(self.dynamic_slots.iter_mut()) {
            s.grow(dynamic_len(g.common.sh_coeffs.len(), g.track.len()));
        }
        Ok(target)
    }

    /// Converts the top `eta_percent` of statics by motion score.
    pub fn extract(&mut self, cameras: &[Camera]) -> Result<ConversionReport> {
        let Some(reference) = dynamics::reference_camera(&self.scene, cameras) else {
            return Err(Error::Config("extraction needs at least one camera".into()));
        };
        let scores = dynamics::score_motion(&self.scene, reference)?;
        let mut report = dynamics::extract_dynamic(&mut self.scene, &scores, self.config.eta_percent)?;
        let mut keep = vec![true; self.static_slots.len()];
        for &i in &report.converted_ids {
            keep[i] = false;
        }
        let mut it = keep.iter();
        self.static_slots.retain(|_| *it.next().unwrap());
        let first_new = self.scene.dynamics.len() - report.converted;
        for g in &self.scene.dynamics[first_new..] {
            self.dynamic_slots.push(Slot::zeros(dynamic_len(g.common.sh_coeffs.len(), g.track.len())));
        }
        report.iteration = Some(self.iteration);
        Ok(report)
    }

    /// Mean backtracked error of every Gaussian seen since the last reset.
    pub fn prune_records(&self) -> Vec<PruneRecord> {
        let rec = |source: SourceId, s: &Slot| {
            (s.err_views > 0).then(|| PruneRecord {
                source,
                e_total: s.err_sum / s.err_views as f64,
                views_seen: s.err_views as usize,
            })
        };
        let st = self.static_slots.iter().enumerate().filter_map(|(i, s)| rec(SourceId::stat(i), s));
        let dy = self.dynamic_slots.iter().enumerate().filter_map(|(i, s)| rec(SourceId::dynamic(i), s));
        st.chain(dy).collect()
    }

    /// Prunes by backtracked error, then clears the error buffers.
    pub fn backtrack_prune(&mut self) -> PruneReport {
        let records = self.prune_records();
        let (n_s, n_d) = (self.scene.statics.len(), self.scene.dynamics.len());
        let mut report = dynamics::prune_by_backtracking(&mut self.scene, &records, self.config.prune_kappa, self.config.prune_min_error);
        let (ks, kd) = dynamics::keep_masks(n_s, n_d, &report.removed);
        let mut it = ks.iter();
        self.static_slots.retain(|_| *it.next().unwrap());
        let mut it = kd.iter();
        self.dynamic_slots.retain(|_| *it.next().unwrap());
        for s in self.static_slots.iter_mut().chain(self.dynamic_slots.iter_mut()) {
            s.clear_errors();
        }
        report.iteration = Some(self.iteration);
        report
    }
}

/// Scalars reported by one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    /// Photometric loss plus regularization.
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub grad_norm: f64,
    pub splats: usize,
    pub micros: u128,
}

/// One optimization step on a single view.
pub fn train_step(state: &mut TrainState, cam: &Camera, frame: usize, gt: &Image) -> Result<StepMetrics> {
    let start = Instant::now();
    let cfg = &state.config;
    let fr = render_frame(&state.scene, cam, frame, &state.settings, true)?;
    let lo = loss(&fr.output.image, gt, cfg.ssim_weight)?;
    let reg = regularization(&state.scene, cfg.reg_static, cfg.reg_dynamic);
    let total = lo.loss + reg;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            iteration: state.iteration,
            detail: format!("loss {total} (photometric {}, regularization {reg})", lo.loss),
        });
    }
    let train_psnr = psnr(&fr.output.image, gt, 1.0)?;
    let splats = fr.splats.len();
    let mut bw = backward_frame(&state.scene, cam, &fr, &lo.dimage, Some(&lo.q))?;
    drop(fr);
    regularization_backward(&state.scene, cfg.reg_static, cfg.reg_dynamic, &mut bw.grad);
    let grad_norm = bw.grad.norm_sq().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite { iteration: state.iteration, detail: "gradient is not finite".into() });
    }

    let (hw, hh) = (0.5 * cam.width as f64, 0.5 * cam.height as f64);
    for (sid, g) in &bw.screen_grad {
        let slot = slot_mut(state, *sid);
        slot.grad_accum += (g[0] * hw).hypot(g[1] * hh);
        slot.grad_count += 1;
    }
    if let Some(bt) = &bw.backtrack {
        for (sid, b) in bt {
            if b.visible {
                let slot = slot_mut(state, *sid);
                slot.err_sum += b.error;
                slot.err_views += 1;
            }
        }
    }

    let it = state.iteration;
    let step = state.optimizer.step(it as u64 + 1);
    let cfg = &state.config;
    let extent = state.extent;
    let lr = |g: Group| cfg.learning_rate(g, it, extent);
    for ((g, gr), slot) in state.scene.statics.iter_mut().zip(&bw.grad.statics).zip(&mut state.static_slots) {
        let mut p = pack_static(g);
        let gv = slots::pack_static_grad(gr);
        slots::apply_groups(&step, &mut p, &gv, slot, &static_groups(g.common.sh_coeffs.len()), lr);
        unpack_static(g, &p);
        g.common.rotation_base = g.common.rotation_base.normalized();
    }
    for ((g, gr), slot) in state.scene.dynamics.iter_mut().zip(&bw.grad.dynamics).zip(&mut state.dynamic_slots) {
        let mut p = pack_dynamic(g);
        let gv = slots::pack_dynamic_grad(gr);
        let groups = dynamic_groups(g.common.sh_coeffs.len(), g.track.len());
        slots::apply_groups(&step, &mut p, &gv, slot, &groups, lr);
        unpack_dynamic(g, &p);
        g.track.normalize_rotations();
        g.temporal_opacity.project();
    }
    state.iteration += 1;
    Ok(StepMetrics {
        loss: total,
        l1: lo.l1,
        ssim: lo.ssim,
        psnr: train_psnr,
        grad_norm,
        splats,
        micros: start.elapsed().as_micros(),
    })
}

fn slot_mut(state: &mut TrainState, sid: SourceId) -> &mut Slot {
    match sid.population {
        Population::Static => &mut state.static_slots[sid.index],
        Population::Dynamic => &mut state.dynamic_slots[sid.index],
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Current training window in frames.
    pub duration: usize,
    pub loss: f64,
    pub psnr_train: f64,
    pub n_static: usize,
    pub n_dynamic: usize,
    pub step_micros: u128,
    pub events: Vec<serde_json::Value>,
}

impl MetricsRecord {
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointReason {
    Extension,
    Final,
}

/// Receives log records and checkpoint requests from [`run`].
pub trait Observer {
    fn record(&mut self, _record: &MetricsRecord) {}

    fn checkpoint(&mut self, _state: &TrainState, _reason: CheckpointReason) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

pub struct RunOutput {
    pub state: TrainState,
    pub log: Vec<MetricsRecord>,
}

fn event<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("event serializes")
}

/// Trains `init` on `data` following `config`.
///
/// `init` supplies the starting Gaussians; its time bookkeeping is replaced
/// by the configured window.
pub fn run(config: &TrainConfig, data: &TrainingSet, mut init: SceneModel, observer: &mut dyn Observer) -> Result<RunOutput> {
    config.validate()?;
    if !init.dynamics.is_empty() && init.keyframe_interval != config.keyframe_interval {
        return Err(Error::Config("initial dynamics use a different keyframe interval".into()));
    }
    init.total_frames = data.total_frames;
    init.keyframe_interval = config.keyframe_interval;
    if init.dynamics.is_empty() {
        init.duration_frames = config.initial_duration.min(data.total_frames);
    }
    let mut state = TrainState::new(init, config.clone(), data.extent());
    let mut log = Vec::new();

    while state.iteration < config.total_iterations {
        let cam_idx = state.rng.random_range(0..data.cameras.len());
        let frame = state.rng.random_range(0..state.scene.duration_frames);
        let cam = &data.cameras[cam_idx];
        let m = train_step(&mut state, cam, frame, data.image(cam_idx, frame))?;
        let it = state.iteration;
        let mut events = Vec::new();

        if it >= config.densify_from && it < config.densify_until && it % config.densify_every == 0 {
            let r = densify_and_prune(&mut state);
            if r.cloned + r.split + r.removed > 0 {
                events.push(event(&r));
            }
        }
        if it < config.backtrack_until && it % config.backtrack_every == 0 {
            let r = state.backtrack_prune();
            if !r.removed.is_empty() {
                events.push(event(&r));
            }
        }
        let mut extracted = false;
        let mut extended = false;
        if it % config.extend_every == 0 && state.scene.duration_frames < state.scene.total_frames {
            let duration = state.extend()?;
            events.push(serde_json::json!({ "event": "extend", "iteration": it, "duration": duration }));
            extended = true;
            if config.enable_extraction {
                events.push(event(&state.extract(&data.cameras)?));
                extracted = true;
            }
        }
        // A single-frame dataset has no motion to extract.
        if config.enable_extraction && !extracted && data.total_frames > 1 && it % config.extract_every == 0 {
            events.push(event(&state.extract(&data.cameras)?));
        }

        if it % config.log_every == 0 || !events.is_empty() || it == config.total_iterations {
            let rec = MetricsRecord {
                iteration: it,
                duration: state.scene.duration_frames,
                loss: m.loss,
                psnr_train: m.psnr,
                n_static: state.scene.statics.len(),
                n_dynamic: state.scene.dynamics.len(),
                step_micros: m.micros,
                events,
            };
            observer.record(&rec);
            log.push(rec);
        }
        if extended {
            observer.checkpoint(&state, CheckpointReason::Extension)?;
        }
    }
    observer.checkpoint(&state, CheckpointReason::Final)?;
    Ok(RunOutput { state, log })
}
