//! Synthetic multi-view videos with known static/dynamic labels.
//!
//! A generator scene is built from a textured ground disk, a few static
//! blobs and a handful of moving objects, each a small cluster of Gaussians.
//! Every frame of every camera is rendered with the crate's own renderer.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::dataset::{image_path, DatasetManifest, MANIFEST_VERSION};
use super::ply::{seed_statics, write_ply, PointCloud};
use crate::error::{Error, Result};
use crate::gauss::{
    logit, Camera, DynamicGaussian, GaussianCommon, KeyframeTrack, Population, SceneModel, SourceId,
    StaticGaussian, TemporalOpacity,
};
use crate::img::Image;
use crate::interp::{self, TimeQuery};
use crate::quat::{Quat, Vec3};
use crate::render::{render_image, RasterSettings, TEMPORAL_CULL};
use crate::sh::{rgb_to_dc, SH_C0};
use crate::train::{TrainConfig, TrainingSet};

/// How an object moves over the normalized clip time `u ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    /// Displacement `u · velocity`.
    Linear { velocity: [f64; 3] },
    /// Circle of `radius` around the object center in the ground plane.
    Circular { radius: f64, turns: f64 },
    /// Visible only while `start ≤ u ≤ end`, drifting by `u · velocity`.
    Window { start: f64, end: f64, velocity: [f64; 3] },
}

impl Motion {
    pub fn name(&self) -> &'static str {
        match self {
            Motion::Linear { .. } => "linear",
            Motion::Circular { .. } => "circular",
            Motion::Window { .. } => "window",
        }
    }

    fn offset(&self, u: f64) -> [f64; 3] {
        match self {
            Motion::Linear { velocity } | Motion::Window { velocity, .. } => velocity.map(|v| v * u),
            Motion::Circular { radius, turns } => {
                let a = std::f64::consts::TAU * turns * u;
                [radius * (a.cos() - 1.0), radius * a.sin(), 0.0]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub center: [f64; 3],
    pub motion: Motion,
    pub gaussians: usize,
    /// Standard deviation of member offsets around the center.
    pub spread: f64,
    /// Typical standard deviation of one member Gaussian.
    pub size: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub ground_gaussians: usize,
    pub blob_gaussians: usize,
    pub objects: Vec<ObjectSpec>,
    pub cameras: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub ring_radius: f64,
    /// Camera heights, cycled around the ring.
    pub camera_heights: Vec<f64>,
    pub focal: f64,
    pub held_out: Vec<usize>,
    /// Standard deviation of the noise added to point-cloud positions.
    pub jitter: f64,
}

impl Default for SyntheticSceneSpec {
    /// Eight cameras at 64×64, 60 frames, 300 Gaussians with two moving
    /// objects and one that disappears halfway.
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            ground_gaussians: 200,
            blob_gaussians: 76,
            objects: vec![
                ObjectSpec {
                    center: [-0.6, -0.5, 0.3],
                    motion: Motion::Linear { velocity: [0.8, 0.4, 0.0] },
                    gaussians: 8,
                    spread: 0.08,
                    size: 0.08,
                    color: [0.95, 0.2, 0.15],
                },
                ObjectSpec {
                    center: [0.6, 0.2, 0.35],
                    motion: Motion::Circular { radius: 0.35, turns: 0.5 },
                    gaussians: 8,
                    spread: 0.08,
                    size: 0.08,
                    color: [0.15, 0.35, 0.95],
                },
                ObjectSpec {
                    center: [-0.1, 0.7, 0.3],
                    motion: Motion::Window { start: 0.0, end: 0.5, velocity: [-0.3, 0.0, 0.0] },
                    gaussians: 8,
                    spread: 0.08,
                    size: 0.08,
                    color: [0.95, 0.85, 0.1],
                },
            ],
            cameras: 8,
            width: 64,
            height: 64,
            frames: 60,
            ring_radius: 4.0,
            camera_heights: vec![1.2, 2.0],
            focal: 64.0,
            held_out: vec![3],
            jitter: 0.01,
        }
    }
}

impl SyntheticSceneSpec {
    /// The default scene with objects moving several times faster.
    pub fn fast_motion() -> Self {
        let mut s = Self::default();
        for o in &mut s.objects {
            o.motion = match &o.motion {
                Motion::Linear { .. } => Motion::Circular { radius: 0.35, turns: 2.0 },
                Motion::Circular { radius, .. } => Motion::Circular { radius: *radius, turns: 2.5 },
                other => other.clone(),
            };
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras == 0 || self.camera_heights.is_empty() || self.frames == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("synthetic scene needs cameras, frames and a resolution".into()));
        }
        if self.held_out.iter().any(|&c| c >= self.cameras) || self.held_out.len() >= self.cameras {
            return Err(Error::Config("held-out cameras must leave at least one training camera".into()));
        }
        for o in &self.objects {
            if let Motion::Window { start, end, .. } = o.motion {
                if !(start <= end) {
                    return Err(Error::Config(format!("window [{start}, {end}] is inverted")));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth label of one generator Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLabel {
    /// Position in the generator scene (statics first).
    pub id: usize,
    pub source: SourceId,
    pub label: Population,
    pub object: Option<usize>,
    pub motion: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub gaussians: Vec<GeneratorLabel>,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub scene: SceneModel,
    pub labels: Vec<GeneratorLabel>,
    pub cameras: Vec<Camera>,
    pub pointcloud: PointCloud,
}

/// Ring of cameras around the origin at alternating heights, z up.
pub fn camera_ring(spec: &SyntheticSceneSpec) -> Vec<Camera> {
    (0..spec.cameras)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / spec.cameras as f64;
            let h = spec.camera_heights[i % spec.camera_heights.len()];
            let eye = Vec3::new(spec.ring_radius * a.cos(), spec.ring_radius * a.sin(), h);
            Camera::look_at(i, eye, Vec3::new(0.0, 0.0, 0.1), Vec3::z(), spec.focal, spec.width, spec.height)
        })
        .collect()
}

fn common(color: [f64; 3], log_scale: [f64; 3], rotation: Quat, opacity: f64) -> GaussianCommon {
    GaussianCommon {
        scale: log_scale,
        rotation_base: rotation,
        opacity_base: logit(opacity),
        sh_coeffs: color.map(rgb_to_dc).to_vec(),
    }
}

fn hue(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        0.5 - 0.45 * (k.min(4.0 - k).clamp(0.0, 1.0) * 2.0 - 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Builds the generator scene, labels, cameras and first-frame point cloud.
pub fn build_generator(spec: &SyntheticSceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let frames = spec.frames;
    let mut scene = SceneModel::empty(frames, frames, 1);
    let mut labels = Vec::new();

    for _ in 0..spec.ground_gaussians {
        let r = 1.6 * rng.random::<f64>().sqrt();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        let (x, y) = (r * a.cos(), r * a.sin());
        let checker = ((x * 1.5).floor() + (y * 1.5).floor()).rem_euclid(2.0);
        let base = if checker == 0.0 { [0.75, 0.7, 0.6] } else { [0.25, 0.35, 0.3] };
        let tint = hue(rng.random());
        let color = std::array::from_fn(|k| 0.75 * base[k] + 0.25 * tint[k]);
        let s = (0.16 + 0.06 * rng.random::<f64>()).ln();
        let rot = Quat::from_axis_angle(Vec3::z(), rng.random::<f64>() * std::f64::consts::PI);
        scene.statics.push(StaticGaussian {
            common: common(color, [s, s - 0.3, 0.03f64.ln()], rot, 0.9),
            pivot: [x, y, -0.3],
            translation: [0.0; 3],
        });
    }
    for _ in 0..spec.blob_gaussians {
        let r = 0.9 + 0.8 * rng.random::<f64>();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        let z = -0.2 + 0.9 * rng.random::<f64>();
        let s = (0.07 + 0.06 * rng.random::<f64>()).ln();
        let axis = Vec3::new(rng.random(), rng.random(), rng.random::<f64>() + 0.1);
        let rot = Quat::from_axis_angle(axis, rng.random::<f64>() * 3.0);
        scene.statics.push(StaticGaussian {
            common: common(hue(rng.random()), [s, s + 0.4, s - 0.2], rot, 0.8),
            pivot: [r * a.cos(), r * a.sin(), z],
            translation: [0.0; 3],
        });
    }
    for i in 0..scene.statics.len() {
        labels.push(GeneratorLabel { id: i, source: SourceId::stat(i), label: Population::Static, object: None, motion: None });
    }

    for (oi, o) in spec.objects.iter().enumerate() {
        let spread = Normal::new(0.0, o.spread).map_err(|e| Error::Config(e.to_string()))?;
        let (a_s, a_f, width) = match o.motion {
            Motion::Window { start, end, .. } => (start, end, 0.01),
            _ => (0.0, 1.0, 1.0 / frames as f64),
        };
        for _ in 0..o.gaussians {
            let offset: [f64; 3] = std::array::from_fn(|_| spread.sample(&mut rng));
            let s = (o.size * (1.0 + 0.5 * rng.random::<f64>())).ln();
            let shade = 0.8 + 0.2 * rng.random::<f64>();
            let color = o.color.map(|c| (c * shade).clamp(0.0, 1.0));
            let positions = (0..=frames)
                .map(|f| {
                    let m = o.motion.offset(f as f64 / frames as f64);
                    std::array::from_fn(|k| o.center[k] + offset[k] + m[k])
                })
                .collect();
            let idx = scene.dynamics.len();
            scene.dynamics.push(DynamicGaussian {
                common: common(color, [s; 3], Quat::IDENTITY, 0.9),
                track: KeyframeTrack { positions, rotations: vec![Quat::IDENTITY; frames + 1], interval: 1 },
                temporal_opacity: TemporalOpacity::new(a_s, width, a_f, width),
            });
            labels.push(GeneratorLabel {
                id: labels.len(),
                source: SourceId::dynamic(idx),
                label: Population::Dynamic,
                object: Some(oi),
                motion: Some(o.motion.name().to_string()),
            });
        }
    }

    let jitter = Normal::new(0.0, spec.jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut cloud = PointCloud::default();
    let q0 = TimeQuery::at(0, frames, 1);
    let dc_color = |c: &GaussianCommon| -> [f64; 3] {
        std::array::from_fn(|k| (SH_C0 * c.sh_coeffs[k] + 0.5).clamp(0.0, 1.0))
    };
    for g in &scene.statics {
        cloud.positions.push(std::array::from_fn(|k| g.pivot[k] + jitter.sample(&mut rng)));
        cloud.colors.push(dc_color(&g.common));
    }
    for g in &scene.dynamics {
        if interp::temporal_opacity(&g.temporal_opacity, 0.0) < TEMPORAL_CULL {
            continue;
        }
        let p = interp::track_position(&g.track, &q0)?;
        cloud.positions.push(std::array::from_fn(|k| p[k] + jitter.sample(&mut rng)));
        cloud.colors.push(dc_color(&g.common));
    }

    Ok(GeneratedScene { scene, labels, cameras: camera_ring(spec), pointcloud: cloud })
}

impl GeneratedScene {
    /// Every frame of `cameras`, camera-major.
    pub fn render(&self, cameras: &[Camera]) -> Result<Vec<Image>> {
        let frames = self.scene.total_frames;
        let jobs: Vec<(usize, usize)> = (0..cameras.len()).flat_map(|c| (0..frames).map(move |t| (c, t))).collect();
        let settings = RasterSettings::default();
        jobs.par_iter().map(|&(c, t)| render_image(&self.scene, &cameras[c], t, &settings)).collect()
    }

    /// Ground truth for the non-held-out cameras, quantized to 8 bits like
    /// the PNGs written by [`gen_synthetic`].
    pub fn training_set(&self, held_out: &[usize]) -> Result<TrainingSet> {
        let cams: Vec<Camera> = self.cameras.iter().filter(|c| !held_out.contains(&c.id)).cloned().collect();
        let images = self
            .render(&cams)?
            .into_iter()
            .map(|im| Image::from_rgb8(im.width, im.height, &im.to_rgb8()))
            .collect::<Result<Vec<_>>>()?;
        TrainingSet::new(cams, self.scene.total_frames, images)
    }

    /// Statics seeded from the point cloud, ready for training with `keyframe_interval`.
    pub fn initial_scene(&self, keyframe_interval: usize, sh_degree: usize) -> Result<SceneModel> {
        let total = self.scene.total_frames;
        let mut init = SceneModel::empty(keyframe_interval.max(10).min(total), total, keyframe_interval);
        init.statics = seed_statics(&self.pointcloud, sh_degree)?;
        Ok(init)
    }
}

/// Writes a complete dataset for `spec` under `root`.
pub fn gen_synthetic(spec: &SyntheticSceneSpec, root: &Path) -> Result<DatasetManifest> {
    let generated = build_generator(spec)?;
    let images = generated.render(&generated.cameras)?;
    let frames = spec.frames;
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| img.save_png(&image_path(root, generated.cameras[i / frames].id, i % frames)))?;
    write_ply(&root.join("points3d.ply"), &generated.pointcloud)?;
    let labels = LabelFile { gaussians: generated.labels.clone() };
    let lp = root.join("labels.json");
    std::fs::write(&lp, serde_json::to_string_pretty(&labels)?).map_err(|e| Error::io(&lp, e))?;
    Checkpoint::new(generated.scene.clone(), TrainConfig::default(), 0).save(&root.join("generator.ckpt"))?;
    let sp = root.join("synthetic.json");
    std::fs::write(&sp, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&sp, e))?;
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        version: MANIFEST_VERSION,
        frames,
        cameras: generated.cameras,
        held_out: spec.held_out.clone(),
        pointcloud: "points3d.ply".into(),
        labels: Some("labels.json".into()),
        generator: Some("generator.ckpt".into()),
    };
    manifest.save()?;
    Ok(manifest)
}

pub fn load_labels(path: &Path) -> Result<LabelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Base opacity under which a trained Gaussian is left out of label matching.
pub const FAINT_OPACITY: f64 = 0.05;

/// How well a trained scene's populations agree with generator labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabelAgreement {
    /// Trained Gaussians skipped for having base opacity below the cutoff.
    pub faint: usize,
    /// Trained Gaussians nearest to a moving-object Gaussian at frame 0.
    pub moving_total: usize,
    pub moving_dynamic: usize,
    /// Same for objects with a visibility window.
    pub window_total: usize,
    pub window_dynamic: usize,
    /// Trained Gaussians nearest to static generator Gaussians.
    pub static_total: usize,
    pub static_dynamic: usize,
}

impl LabelAgreement {
    /// Fraction of moving-object-derived Gaussians labeled dynamic.
    pub fn moving_recall(&self) -> f64 {
        if self.moving_total == 0 {
            return 0.0;
        }
        self.moving_dynamic as f64 / self.moving_total as f64
    }
}

/// Position of every Gaussian of `scene` at frame 0, statics first.
pub fn positions_at_start(scene: &SceneModel) -> Vec<(SourceId, [f64; 3])> {
    let mut out: Vec<(SourceId, [f64; 3])> =
        scene.statics.iter().enumerate().map(|(i, g)| (SourceId::stat(i), g.pivot)).collect();
    for (i, g) in scene.dynamics.iter().enumerate() {
        if let Some(p) = g.track.positions.first() {
            out.push((SourceId::dynamic(i), *p));
        }
    }
    out
}

/// Matches each trained Gaussian to its nearest generator Gaussian at
/// frame 0 and tallies populations per generator category. Gaussians whose
/// base opacity is below `min_opacity` barely show in either separated
/// render and are only counted as `faint`.
pub fn label_agreement(
    trained: &SceneModel,
    generator: &SceneModel,
    labels: &[GeneratorLabel],
    min_opacity: f64,
) -> LabelAgreement {
    let gen = positions_at_start(generator);
    let mut out = LabelAgreement::default();
    for (sid, p) in positions_at_start(trained) {
        let opacity = match sid.population {
            Population::Static => trained.statics[sid.index].common.opacity(),
            Population::Dynamic => trained.dynamics[sid.index].common.opacity(),
        };
        if opacity < min_opacity {
            out.faint += 1;
            continue;
        }
        let nearest = gen
            .iter()
            .enumerate()
            .map(|(i, (_, q))| (i, (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let Some((gi, _)) = nearest else { break };
        let label = labels.iter().find(|l| l.source == gen[gi].0);
        let is_dyn = sid.population == Population::Dynamic;
        match label.and_then(|l| l.motion.as_deref()) {
            Some("window") => {
                out.window_total += 1;
                out.window_dynamic += is_dyn as usize;
            }
            Some(_) => {
                out.moving_total += 1;
                out.moving_dynamic += is_dyn as usize;
            }
            None => {
                out.static_total += 1;
                out.static_dynamic += is_dyn as usize;
            }
        }
    }
    out
}
