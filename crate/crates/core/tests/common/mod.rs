#![allow(dead_code)]

use keysplat::gauss::{
    logit, Camera, DynamicGaussian, GaussianCommon, KeyframeTrack, SceneModel, StaticGaussian, TemporalOpacity,
};
use keysplat::quat::{Quat, Vec3};
use keysplat::gauss::SourceId;
use keysplat::render::{
    backward_frame, rasterize_backward, reference_render, render_frame, RasterSettings, SceneGrad, Splat2D,
};
use keysplat::sh::rgb_to_dc;
use keysplat::train::{pack_dynamic, pack_dynamic_grad, pack_static, pack_static_grad, unpack_dynamic, unpack_static};
use keysplat::train::{regularization, regularization_backward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    Quat([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .normalized()
}

fn random_common(rng: &mut ChaCha8Rng, sh_degree: usize, size: (f64, f64), opacity: (f64, f64)) -> GaussianCommon {
    let n = 3 * (sh_degree + 1) * (sh_degree + 1);
    let mut sh = vec![0.0; n];
    for (i, c) in sh.iter_mut().enumerate() {
        *c = if i < 3 { rgb_to_dc(rng.random_range(0.3..0.9)) } else { rng.random_range(-0.1..0.1) };
    }
    GaussianCommon {
        scale: std::array::from_fn(|_| rng.random_range(size.0..size.1).ln()),
        rotation_base: random_quat(rng),
        opacity_base: logit(rng.random_range(opacity.0..opacity.1)),
        sh_coeffs: sh,
    }
}

pub struct SceneParams {
    pub statics: usize,
    pub dynamics: usize,
    pub sh_degree: usize,
    pub duration: usize,
    pub interval: usize,
    /// Half extent of the cube holding the means.
    pub spread: f64,
    pub size: (f64, f64),
    pub opacity: (f64, f64),
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            statics: 4,
            dynamics: 4,
            sh_degree: 1,
            duration: 20,
            interval: 5,
            spread: 0.8,
            size: (0.15, 0.45),
            opacity: (0.2, 0.8),
        }
    }
}

/// Gaussians around the origin; cameras from [`test_camera`] see all of them.
pub fn random_scene(rng: &mut ChaCha8Rng, p: &SceneParams) -> SceneModel {
    let mut scene = SceneModel::empty(p.duration, p.duration, p.interval);
    let point = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(-p.spread..p.spread)) };
    for _ in 0..p.statics {
        let pivot = point(rng);
        let translation = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
        scene.statics.push(StaticGaussian { common: random_common(rng, p.sh_degree, p.size, p.opacity), pivot, translation });
    }
    let k = scene.required_keyframes();
    for _ in 0..p.dynamics {
        let start = point(rng);
        let mut positions = vec![start];
        let mut rotations = vec![random_quat(rng)];
        for n in 1..k {
            let prev: [f64; 3] = positions[n - 1];
            positions.push(std::array::from_fn(|i| prev[i] + rng.random_range(-0.15..0.15)));
            let r = rotations[n - 1].0;
            rotations.push(Quat(std::array::from_fn(|i| r[i] + rng.random_range(-0.3..0.3))).normalized());
        }
        let mut track = KeyframeTrack { positions, rotations, interval: p.interval };
        track.align_rotations();
        let a_s = rng.random_range(0.0..0.5);
        let a_f = a_s + rng.random_range(0.0..0.5);
        scene.dynamics.push(DynamicGaussian {
            common: random_common(rng, p.sh_degree, p.size, p.opacity),
            track,
            temporal_opacity: TemporalOpacity::new(a_s, rng.random_range(0.1..0.6), a_f, rng.random_range(0.1..0.6)),
        });
    }
    scene
}

pub fn test_camera(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Camera {
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    let eye = Vec3::new(4.0 * a.cos(), 4.0 * a.sin(), rng.random_range(-1.0..1.5));
    Camera::look_at(0, eye, Vec3::zeros(), Vec3::z(), 0.9 * width as f64, width, height)
}

/// Linear functional of the image: `Σ w_i · image_i`.
pub fn functional(scene: &SceneModel, cam: &Camera, frame: usize, w: &[f64]) -> f64 {
    let fr = render_frame(scene, cam, frame, &RasterSettings::exact(), false).unwrap();
    fr.output.image.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// One finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct FdCase {
    pub analytic: f64,
    pub numeric: f64,
}

impl FdCase {
    /// Relative error with an absolute floor `floor` for near-zero entries.
    pub fn rel_err(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Central differences over every packed parameter of every Gaussian.
pub fn fd_scene(scene: &SceneModel, cam: &Camera, frame: usize, w: &[f64], h: f64) -> Vec<(String, FdCase)> {
    let settings = RasterSettings::exact();
    let fr = render_frame(scene, cam, frame, &settings, true).unwrap();
    let bw = backward_frame(scene, cam, &fr, w, None).unwrap();
    let mut out = Vec::new();
    for i in 0..scene.statics.len() {
        let base = pack_static(&scene.statics[i]);
        let grad = pack_static_grad(&bw.grad.statics[i]);
        for j in 0..base.len() {
            let eval = |d: f64| {
                let mut s = scene.clone();
                let mut p = base.clone();
                p[j] += d;
                unpack_static(&mut s.statics[i], &p);
                functional(&s, cam, frame, w)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            out.push((format!("static {i} param {j}"), FdCase { analytic: grad[j], numeric }));
        }
    }
    for i in 0..scene.dynamics.len() {
        let base = pack_dynamic(&scene.dynamics[i]);
        let grad = pack_dynamic_grad(&bw.grad.dynamics[i]);
        for j in 0..base.len() {
            let eval = |d: f64| {
                let mut s = scene.clone();
                let mut p = base.clone();
                p[j] += d;
                unpack_dynamic(&mut s.dynamics[i], &p);
                functional(&s, cam, frame, w)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            out.push((format!("dynamic {i} param {j}"), FdCase { analytic: grad[j], numeric }));
        }
    }
    out
}

/// Outcome of a batch of finite-difference comparisons.
#[derive(Debug, Clone, Default)]
pub struct OracleSummary {
    pub cases: usize,
    pub worst: f64,
    pub worst_case: String,
}

impl OracleSummary {
    fn add(&mut self, name: String, err: f64) {
        self.cases += 1;
        if err > self.worst {
            self.worst = err;
            self.worst_case = name;
        }
    }
}

/// Renderer chain against central differences on `scenes` random scenes.
/// Entries far below the largest gradient of their scene are compared on
/// an absolute floor of `1e-6` times that gradient.
pub fn gradient_oracle(scenes: u64) -> OracleSummary {
    let mut out = OracleSummary::default();
    for seed in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let params = SceneParams { sh_degree: (seed % 3) as usize, ..Default::default() };
        let scene = random_scene(&mut rng, &params);
        let cam = test_camera(&mut rng, 32, 32);
        let frame = rng.random_range(0..params.duration);
        let w: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cases = fd_scene(&scene, &cam, frame, &w, 1e-6);
        let scale = cases.iter().map(|(_, c)| c.analytic.abs()).fold(0.0, f64::max);
        for (name, c) in cases {
            out.add(format!("scene {seed} {name}"), c.rel_err(1e-6 * scale));
        }
    }
    out
}

/// Absolute error of the regularizer gradient against central differences.
pub fn regularizer_oracle(scenes: u64) -> OracleSummary {
    let (rs, rd) = (0.3, 0.7);
    let h = 1e-6;
    let mut out = OracleSummary::default();
    for seed in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let scene = random_scene(&mut rng, &SceneParams::default());
        let mut grad = SceneGrad::zeros_like(&scene);
        regularization_backward(&scene, rs, rd, &mut grad);
        for i in 0..scene.statics.len() {
            for k in 0..3 {
                let eval = |d: f64| {
                    let mut s = scene.clone();
                    s.statics[i].translation[k] += d;
                    regularization(&s, rs, rd)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                out.add(format!("scene {seed} static {i} d{k}"), (grad.statics[i].translation[k] - numeric).abs());
            }
        }
        for i in 0..scene.dynamics.len() {
            for n in 0..scene.dynamics[i].track.len() {
                for k in 0..3 {
                    let eval = |d: f64| {
                        let mut s = scene.clone();
                        s.dynamics[i].track.positions[n][k] += d;
                        regularization(&s, rs, rd)
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    out.add(format!("scene {seed} dynamic {i} p{n}.{k}"), (grad.dynamics[i].positions[n][k] - numeric).abs());
                }
            }
        }
    }
    out
}

/// A synthetic scene small enough for full training runs in a test.
pub fn tiny_spec(frames: usize) -> keysplat::io::SyntheticSceneSpec {
    keysplat::io::SyntheticSceneSpec {
        ground_gaussians: 40,
        blob_gaussians: 12,
        cameras: 3,
        frames,
        width: 24,
        height: 24,
        focal: 24.0,
        held_out: vec![],
        ..Default::default()
    }
}

/// A short progressive schedule that fires every event.
pub fn tiny_config() -> keysplat::train::TrainConfig {
    keysplat::train::TrainConfig {
        keyframe_interval: 2,
        initial_duration: 4,
        extend_every: 20,
        extract_every: 30,
        backtrack_every: 25,
        backtrack_until: 150,
        densify_from: 10,
        densify_until: 150,
        densify_every: 10,
        densify_grad_threshold: 1e-4,
        total_iterations: 160,
        log_every: 10,
        ..Default::default()
    }
}

/// Largest per-channel difference between tile and reference renders over
/// `scenes` random 64×64 scenes of up to 200 Gaussians.
pub fn oracle_max_diff(scenes: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..=200);
        let statics = rng.random_range(0..=n);
        let params = SceneParams { statics, dynamics: n - statics, size: (0.03, 0.3), opacity: (0.05, 0.99), ..Default::default() };
        let scene = random_scene(&mut rng, &params);
        let cam = test_camera(&mut rng, 64, 64);
        let frame = rng.random_range(0..params.duration);
        let settings = RasterSettings::exact();
        let fr = render_frame(&scene, &cam, frame, &settings, false).unwrap();
        let reference = reference_render(&fr.splats, 64, 64, &settings);
        for (a, b) in fr.output.image.data.iter().zip(&reference.data) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Bits of a forward and backward pass on a pool of `threads` workers.
pub fn render_bits(threads: usize) -> (Vec<u64>, Vec<u64>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = SceneParams { statics: 100, dynamics: 100, size: (0.03, 0.3), ..Default::default() };
        let scene = random_scene(&mut rng, &params);
        let cam = test_camera(&mut rng, 64, 64);
        let fr = render_frame(&scene, &cam, 3, &RasterSettings::default(), true).unwrap();
        let dimage: Vec<f64> = (0..64 * 64 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..64 * 64).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = rasterize_backward(&fr.output, &dimage, Some(&q)).unwrap();
        let image = fr.output.image.data.iter().map(|v| v.to_bits()).collect();
        let grads = g
            .splats
            .iter()
            .flat_map(|s| s.mean_px.into_iter().chain(s.conic).chain(s.color).chain([s.opacity]))
            .chain(g.error_sum.unwrap())
            .map(f64::to_bits)
            .collect();
        (image, grads)
    })
}

/// A screen-aligned splat; `inv_var = 0` covers the whole image at full strength.
pub fn flat_splat(index: usize, depth: f64, opacity: f64, center: [f64; 2], inv_var: f64) -> Splat2D {
    Splat2D {
        realized: index,
        source: SourceId::stat(index),
        mean_px: center,
        cov2d: [1.0 / inv_var.max(1e-12), 0.0, 1.0 / inv_var.max(1e-12)],
        conic: [inv_var, 0.0, inv_var],
        depth,
        radius_px: 1e6,
        color: [0.2, 0.5, 0.8],
        opacity,
    }
}

