mod common;

use common::*;
use keysplat::render::{backtrack_errors, rasterize_backward, rasterize_forward, render_frame, RasterSettings, Splat2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn tiles_match_reference() {
    let d = oracle_max_diff(50);
    assert!(d <= 1e-4, "max difference {d}");
}

#[test]
fn thread_count_does_not_change_bits() {
    let one = render_bits(1);
    assert_eq!(one, render_bits(2));
    assert_eq!(one, render_bits(8));
}

#[test]
fn accumulated_alpha_is_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = SceneParams { statics: 150, dynamics: 50, opacity: (0.5, 0.999), ..Default::default() };
    let scene = random_scene(&mut rng, &params);
    let cam = test_camera(&mut rng, 64, 64);
    for settings in [RasterSettings::default(), RasterSettings::exact()] {
        let fr = render_frame(&scene, &cam, 0, &settings, false).unwrap();
        assert!(fr.output.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

#[test]
fn color_gradient_is_blend_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scene = random_scene(&mut rng, &SceneParams { statics: 30, dynamics: 10, ..Default::default() });
    let cam = test_camera(&mut rng, 48, 40);
    let fr = render_frame(&scene, &cam, 2, &RasterSettings::default(), true).unwrap();
    let mut dimage = vec![0.0; 48 * 40 * 3];
    for px in dimage.chunks_exact_mut(3) {
        px[1] = 1.0;
    }
    let g = rasterize_backward(&fr.output, &dimage, None).unwrap();
    for (s, w) in g.splats.iter().zip(&g.weight_sum) {
        assert!((s.color[1] - w).abs() <= 1e-12 * w.max(1.0));
        assert_eq!(s.color[0], 0.0);
    }
}

#[test]
fn opaque_cover_backtracks_the_plain_mean() {
    let (w, h) = (20, 12);
    let splats = vec![flat_splat(0, 1.0, 1.0, [10.0, 6.0], 0.0)];
    let mut out = rasterize_forward(&splats, w, h, &RasterSettings::default(), true);
    let q: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let bt = backtrack_errors(&mut out, &q).unwrap();
    let mean = q.iter().sum::<f64>() / q.len() as f64;
    assert!(bt[0].visible);
    assert!((bt[0].error - mean).abs() < 1e-12, "{} vs {mean}", bt[0].error);
}

#[test]
fn fully_occluded_splat_is_invisible() {
    let (w, h) = (16, 16);
    let mut splats: Vec<Splat2D> = (0..3).map(|i| flat_splat(i, 1.0 + i as f64, 1.0, [8.0, 8.0], 0.0)).collect();
    splats.push(flat_splat(3, 10.0, 0.9, [8.0, 8.0], 0.1));
    let mut out = rasterize_forward(&splats, w, h, &RasterSettings::default(), true);
    let bt = backtrack_errors(&mut out, &vec![1.0; w * h]).unwrap();
    assert!(bt[..3].iter().all(|b| b.visible));
    assert!(!bt[3].visible);
    assert_eq!(bt[3].error, 0.0);
}
