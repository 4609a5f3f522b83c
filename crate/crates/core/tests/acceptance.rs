//! Every primary acceptance criterion, one line of output each.
//!
//! Run with `cargo test -p keysplat --test acceptance -- --nocapture` to
//! see the report. The training criteria take several minutes.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use keysplat::dynamics::{prune_by_backtracking, PruneRecord};
use keysplat::gauss::{KeyframeTrack, SceneModel, SourceId, StaticGaussian, TemporalOpacity};
use keysplat::interp::{
    slerp, slerp_backward, temporal_opacity, temporal_opacity_grad, track_position, track_position_backward, TimeQuery,
};
use keysplat::io::synth::FAINT_OPACITY;
use keysplat::io::{build_generator, label_agreement, Checkpoint, SyntheticSceneSpec};
use keysplat::metrics::evaluate;
use keysplat::quat::Quat;
use keysplat::render::{backtrack_errors, rasterize_forward, RasterSettings};
use keysplat::train::{run, MetricsRecord, Observer, TrainConfig, TrainingSet};
use keysplat::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Goes to the raw stdout handle so the line survives output capture.
fn report(name: &str, pass: bool, detail: String) {
    use std::io::Write;
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

fn quat(rng: &mut ChaCha8Rng) -> Quat {
    random_quat(rng)
}

fn point(rng: &mut ChaCha8Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.random_range(-3.0..3.0))
}

fn random_track(rng: &mut ChaCha8Rng) -> KeyframeTrack {
    let len = rng.random_range(3..9);
    let interval = rng.random_range(1..13);
    let mut t = KeyframeTrack {
        positions: (0..len).map(|_| point(rng)).collect(),
        rotations: (0..len).map(|_| quat(rng)).collect(),
        interval,
    };
    t.align_rotations();
    t
}

fn at(track: &KeyframeTrack, frame: f64) -> [f64; 3] {
    track_position(track, &TimeQuery::at_time(frame, track.span_frames(), track.interval)).unwrap()
}

fn angle(a: &Quat, b: &Quat) -> f64 {
    let d = a.dot(b);
    b.add(&a.scale(-d)).norm().atan2(d)
}

#[test]
fn interpolator_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let tr = random_track(&mut rng);
        let i = tr.interval as f64;
        for n in 0..tr.len() {
            if at(&tr, n as f64 * i) != tr.positions[n] {
                failures.push(format!("case {case}: keyframe {n} missed"));
            }
        }
        let h = 1e-4 * i;
        for n in 1..tr.len() - 1 {
            let t = n as f64 * i;
            let (p, l1, l2, r1, r2) = (at(&tr, t), at(&tr, t - h), at(&tr, t - 2.0 * h), at(&tr, t + h), at(&tr, t + 2.0 * h));
            for k in 0..3 {
                let left = (3.0 * p[k] - 4.0 * l1[k] + l2[k]) / (2.0 * h);
                let right = (-3.0 * p[k] + 4.0 * r1[k] - r2[k]) / (2.0 * h);
                if (left - right).abs() >= 1e-6 {
                    failures.push(format!("case {case}: derivative jump {} at keyframe {n}", left - right));
                }
            }
        }
        let (a, b) = (point(&mut rng), point(&mut rng));
        let line = KeyframeTrack {
            positions: (0..tr.len()).map(|n| std::array::from_fn(|k| a[k] + n as f64 * b[k])).collect(),
            ..tr.clone()
        };
        let f = rng.random_range(0.0..line.span_frames() as f64);
        let p = at(&line, f);
        if (0..3).any(|k| (p[k] - (a[k] + f / i * b[k])).abs() >= 1e-10) {
            failures.push(format!("case {case}: linear precision"));
        }

        let (x0, x1, t) = (quat(&mut rng), quat(&mut rng), rng.random_range(0.0..=1.0));
        let s = slerp(&x0, &x1, t);
        if (s.norm() - 1.0).abs() >= 1e-8 || (angle(&x0, &s) - t * angle(&x0, &x0.aligned(&x1))).abs() >= 1e-8 {
            failures.push(format!("case {case}: slerp"));
        }

        let a_s = rng.random_range(0.0..1.0);
        let o = TemporalOpacity::new(a_s, rng.random_range(1e-3..1.0), a_s + rng.random_range(0.0..0.5), rng.random_range(1e-3..1.0));
        let tq = rng.random_range(-0.5..1.5);
        let v = temporal_opacity(&o, tq);
        let inside = (o.a_s..=o.a_f).contains(&tq);
        let tail_ok = if tq < o.a_s {
            temporal_opacity(&o, tq + 1e-3) >= v
        } else if tq > o.a_f {
            temporal_opacity(&o, tq - 1e-3) >= v
        } else {
            true
        };
        // Far tails underflow to zero in f64.
        let gap = if tq < o.a_s { (o.a_s - tq) / o.b_s() } else { (tq - o.a_f) / o.b_f() };
        let positive = v > 0.0 || gap * gap > 700.0;
        if !(positive && v <= 1.0) || (inside && v != 1.0) || !tail_ok {
            failures.push(format!("case {case}: temporal opacity {v} at {tq}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 10.0;
    report("interpolator suite", pass, format!("1000 cases, {} failures, {secs:.2} s", failures.len()));
    assert!(pass, "{:?}", &failures[..failures.len().min(5)]);
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of the pure interpolators at `h = 1e-5`.
fn interpolator_fd(cases: usize) -> OracleSummary {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = OracleSummary::default();
    let mut note = |name: String, e: f64| {
        out.cases += 1;
        if e > out.worst {
            out.worst = e;
            out.worst_case = name;
        }
    };
    for case in 0..cases {
        let tr = random_track(&mut rng);
        let q = TimeQuery::at_time(rng.random_range(0.0..tr.span_frames() as f64), tr.span_frames(), tr.interval);
        let w = point(&mut rng);
        let mut g = vec![[0.0; 3]; tr.len()];
        track_position_backward(&tr, &q, &w, &mut g).unwrap();
        let n = rng.random_range(0..tr.len());
        let k = rng.random_range(0..3);
        let f = |d: f64| {
            let mut t = tr.clone();
            t.positions[n][k] += d;
            let p = track_position(&t, &q).unwrap();
            (0..3).map(|j| w[j] * p[j]).sum::<f64>()
        };
        note(format!("position {case}"), rel(g[n][k], (f(h) - f(-h)) / (2.0 * h)));

        let (x0, x1, t) = (quat(&mut rng), quat(&mut rng), rng.random_range(0.0..1.0));
        let wq: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if angle(&x0, &x0.aligned(&x1)) > 1e-3 && x0.dot(&x1).abs() > 1e-3 {
            let (g0, g1) = slerp_backward(&x0, &x1, t, &wq);
            let k = rng.random_range(0..4);
            let f = |a: Quat, b: Quat| (0..4).map(|j| wq[j] * slerp(&a, &b, t).0[j]).sum::<f64>();
            let bump = |q: Quat, d: f64| {
                let mut q = q;
                q.0[k] += d;
                q
            };
            note(format!("slerp x0 {case}"), rel(g0[k], (f(bump(x0, h), x1) - f(bump(x0, -h), x1)) / (2.0 * h)));
            note(format!("slerp x1 {case}"), rel(g1[k], (f(x0, bump(x1, h)) - f(x0, bump(x1, -h))) / (2.0 * h)));
        }

        let a_s = rng.random_range(0.0..1.0);
        let o = TemporalOpacity {
            a_s,
            log_b_s: rng.random_range(-4.0..0.0),
            a_f: a_s + rng.random_range(0.0..0.5),
            log_b_f: rng.random_range(-4.0..0.0),
        };
        let tq = rng.random_range(-0.5..1.5);
        if (tq - o.a_s).abs() > 1e-3 && (tq - o.a_f).abs() > 1e-3 {
            let g = temporal_opacity_grad(&o, tq);
            let field = rng.random_range(0..4);
            let f = |d: f64| {
                let mut o = o;
                *[&mut o.a_s, &mut o.log_b_s, &mut o.a_f, &mut o.log_b_f][field] += d;
                temporal_opacity(&o, tq)
            };
            note(format!("temporal {case}"), rel(g[field], (f(h) - f(-h)) / (2.0 * h)));
        }
    }
    out
}

#[test]
fn gradient_oracle() {
    let start = Instant::now();
    let chain = common::gradient_oracle(6);
    let reg = regularizer_oracle(20);
    let pure = interpolator_fd(400);
    let secs = start.elapsed().as_secs_f64();
    let cases = chain.cases + reg.cases + pure.cases;
    let pass = chain.worst < 1e-3 && reg.worst < 1e-6 && pure.worst < 1e-4 && cases >= 1000 && secs < 120.0;
    report(
        "gradient oracle",
        pass,
        format!(
            "{cases} cases in {secs:.1} s; renderer chain worst rel {:.1e} ({} cases), regularizer worst abs {:.1e}, interpolators worst rel {:.1e}",
            chain.worst, chain.cases, reg.worst, pure.worst
        ),
    );
    assert!(pass, "{chain:?} {reg:?} {pure:?}");
}

#[test]
fn renderer_oracle() {
    let d = oracle_max_diff(50);
    let one = render_bits(1);
    let same = one == render_bits(2) && one == render_bits(8);
    let pass = d <= 1e-4 && same;
    report("renderer oracle", pass, format!("max channel difference {d:.1e} over 50 scenes; identical bits on 1/2/8 threads: {same}"));
    assert!(pass);
}

#[test]
fn backtracking_arithmetic() {
    let (w, h) = (20, 12);
    let q: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let mut out = rasterize_forward(&[flat_splat(0, 1.0, 1.0, [10.0, 6.0], 0.0)], w, h, &RasterSettings::default(), true);
    let single = backtrack_errors(&mut out, &q).unwrap()[0];
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    let mean_ok = single.visible && (single.error - mean).abs() < 1e-12;

    let mut layers: Vec<_> = (0..3).map(|i| flat_splat(i, 1.0 + i as f64, 1.0, [8.0, 8.0], 0.0)).collect();
    layers.push(flat_splat(3, 10.0, 0.9, [8.0, 8.0], 0.1));
    let mut out = rasterize_forward(&layers, 16, 16, &RasterSettings::default(), true);
    let hidden = backtrack_errors(&mut out, &vec![1.0; 256]).unwrap()[3];
    let hidden_ok = !hidden.visible && hidden.error == 0.0;

    let mut scene = SceneModel::empty(1, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let template = random_scene(&mut rng, &SceneParams { statics: 1, dynamics: 0, ..Default::default() }).statics[0].clone();
    scene.statics = vec![StaticGaussian { ..template }; 10];
    let records: Vec<PruneRecord> =
        (0..10).map(|i| PruneRecord { source: SourceId::stat(i), e_total: 0.3, views_seen: 4 }).collect();
    let equal = prune_by_backtracking(&mut scene, &records, 2.0, 0.0);
    let equal_ok = equal.removed.is_empty() && scene.statics.len() == 10;

    let pass = mean_ok && hidden_ok && equal_ok;
    report(
        "backtracking arithmetic",
        pass,
        format!(
            "single-splat error {:.12} vs mean {mean:.12}; occluded splat visible: {}; equal errors pruned {}",
            single.error,
            hidden.visible,
            equal.removed.len()
        ),
    );
    assert!(pass);
}

const RUN_ITERATIONS: usize = 6000;
const SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy)]
struct Outcome {
    held_out: f64,
    train_view: f64,
    recall: f64,
    recall_all: f64,
    seconds: f64,
}

fn train_synthetic(spec: &SyntheticSceneSpec, cfg: &TrainConfig) -> Outcome {
    let start = Instant::now();
    let g = build_generator(spec).unwrap();
    let data = g.training_set(&spec.held_out).unwrap();
    let init = g.initial_scene(cfg.keyframe_interval, cfg.sh_degree).unwrap();
    let out = run(cfg, &data, init, &mut ()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let scene = &out.state.scene;
    let held: Vec<_> = g.cameras.iter().filter(|c| spec.held_out.contains(&c.id)).cloned().collect();
    let held_out = evaluate(scene, &held, &g.render(&held).unwrap(), false).unwrap().psnr;
    let train_view = evaluate(scene, &data.cameras, &g.render(&data.cameras).unwrap(), false).unwrap().psnr;
    Outcome {
        held_out,
        train_view,
        recall: label_agreement(scene, &g.scene, &g.labels, FAINT_OPACITY).moving_recall(),
        recall_all: label_agreement(scene, &g.scene, &g.labels, 0.0).moving_recall(),
        seconds,
    }
}

fn base_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, ..TrainConfig::short_run(RUN_ITERATIONS, 10, SyntheticSceneSpec::default().frames) }
}

/// Default scene, default short-run schedule, one run per seed.
fn base_runs() -> &'static [Outcome; 3] {
    static RUNS: OnceLock<[Outcome; 3]> = OnceLock::new();
    RUNS.get_or_init(|| SEEDS.map(|s| train_synthetic(&SyntheticSceneSpec::default(), &base_config(s))))
}

fn variant_runs(cfg: impl Fn(u64) -> TrainConfig, spec: &SyntheticSceneSpec) -> [Outcome; 3] {
    SEEDS.map(|s| train_synthetic(spec, &cfg(s)))
}

fn majority(flags: &[bool]) -> bool {
    flags.iter().filter(|f| **f).count() * 2 > flags.len()
}

fn list(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/")
}

#[test]
fn end_to_end_synthetic() {
    let o = base_runs()[0];
    let pass = o.held_out >= 30.0 && o.recall >= 0.8 && o.seconds <= 900.0;
    report(
        "end-to-end synthetic",
        pass,
        format!(
            "held-out PSNR {:.2} dB, moving recall {:.2} ({:.2} counting faint Gaussians), train-view PSNR {:.2} dB, {:.0} s",
            o.held_out, o.recall, o.recall_all, o.train_view, o.seconds
        ),
    );
    assert!(pass, "{o:?}");
}

#[test]
fn ablation_without_extraction() {
    let on = base_runs();
    let off = variant_runs(|s| TrainConfig { enable_extraction: false, ..base_config(s) }, &SyntheticSceneSpec::default());
    let drops: Vec<f64> = on.iter().zip(&off).map(|(a, b)| a.held_out - b.held_out).collect();
    let pass = majority(&drops.iter().map(|d| *d >= 2.0).collect::<Vec<_>>());
    report(
        "ablation (a) extraction off",
        pass,
        format!(
            "held-out drop {} dB (need >= 2 in 2 of 3); train-view drop {} dB",
            list(drops.iter().copied()),
            list(on.iter().zip(&off).map(|(a, b)| a.train_view - b.train_view))
        ),
    );
    assert!(pass);
}

#[test]
fn ablation_keyframe_interval() {
    let spec = SyntheticSceneSpec::fast_motion();
    let frames = spec.frames;
    let cfg = |interval: usize| move |s: u64| TrainConfig { seed: s, ..TrainConfig::short_run(RUN_ITERATIONS, interval, frames) };
    let five = variant_runs(cfg(5), &spec);
    let fifty = variant_runs(cfg(50), &spec);
    let pass = majority(&five.iter().zip(&fifty).map(|(a, b)| a.held_out > b.held_out).collect::<Vec<_>>());
    report(
        "ablation (b) interval 5 vs 50, fast motion",
        pass,
        format!(
            "held-out PSNR {} vs {} dB",
            list(five.iter().map(|o| o.held_out)),
            list(fifty.iter().map(|o| o.held_out))
        ),
    );
    assert!(pass);
}

#[test]
fn ablation_conversion_rate() {
    let two = base_runs();
    let half = variant_runs(|s| TrainConfig { eta_percent: 0.5, ..base_config(s) }, &SyntheticSceneSpec::default());
    let pass = majority(&two.iter().zip(&half).map(|(a, b)| a.held_out >= b.held_out).collect::<Vec<_>>());
    report(
        "ablation (c) conversion 2% vs 0.5%",
        pass,
        format!(
            "held-out PSNR {} vs {} dB",
            list(two.iter().map(|o| o.held_out)),
            list(half.iter().map(|o| o.held_out))
        ),
    );
    assert!(pass);
}

#[derive(Default)]
struct Durations(Vec<(usize, usize)>);

impl Observer for Durations {
    fn record(&mut self, r: &MetricsRecord) {
        self.0.push((r.iteration, r.duration));
    }
}

#[test]
fn progressive_schedule() {
    let cfg = TrainConfig { keyframe_interval: 10, initial_duration: 10, extend_every: 400, ..Default::default() };
    let planned = cfg.extension_schedule(300);

    // The real loop on a one-Gaussian, one-camera scene of 300 frames.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cam = test_camera(&mut rng, 12, 12);
    let data = TrainingSet::new(vec![cam], 300, vec![Image::new(12, 12); 300]).unwrap();
    let mut init = random_scene(&mut rng, &SceneParams { statics: 1, dynamics: 0, ..Default::default() });
    init.dynamics.clear();
    let run_cfg = TrainConfig {
        total_iterations: 11_700,
        densify_from: 0,
        densify_until: 0,
        backtrack_until: 0,
        enable_extraction: false,
        log_every: 100_000,
        ..cfg.clone()
    };
    let mut obs = Durations::default();
    run(&run_cfg, &data, init, &mut obs).unwrap();
    let mut observed = Vec::new();
    let mut last = 10;
    for &(it, d) in &obs.0 {
        if d != last {
            observed.push((it, d));
            last = d;
        }
    }
    let steps_ok = observed.windows(2).all(|w| w[1].1 == w[0].1 + 10) && observed.first() == Some(&(400, 20));
    let pass = planned.last() == Some(&(11_600, 300)) && observed == planned && steps_ok;
    report(
        "progressive schedule",
        pass,
        format!("{} extensions, last at {:?}; trainer trace matches plan: {}", planned.len(), planned.last(), observed == planned),
    );
    assert!(pass);
}

#[test]
fn determinism() {
    let g = build_generator(&tiny_spec(12)).unwrap();
    let data = g.training_set(&[]).unwrap();
    let cfg = tiny_config();
    let bytes = || {
        let out = run(&cfg, &data, g.initial_scene(cfg.keyframe_interval, 0).unwrap(), &mut ()).unwrap();
        Checkpoint::from_state(&out.state, true).to_bytes()
    };
    let (a, b) = (bytes(), bytes());
    let pass = a == b;
    report("determinism", pass, format!("two runs, {} checkpoint bytes each, identical: {pass}", a.len()));
    assert!(pass);
}
