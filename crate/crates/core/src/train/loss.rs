use crate::error::Result;
use crate::gauss::SceneModel;
use crate::img::Image;
use crate::metrics::ssim_full;
use crate::render::SceneGrad;

/// Weight of the L1 term in the per-pixel error map.
pub const ERROR_MAP_L1_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    /// `dL/drendered`, interleaved RGB.
    pub dimage: Vec<f64>,
    /// Per-pixel error map used for backtracking.
    pub q: Vec<f64>,
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)` with its image gradient and error map.
pub fn loss(rendered: &Image, gt: &Image, ssim_weight: f64) -> Result<LossOutput> {
    rendered.same_shape(gt)?;
    let s = ssim_full(rendered, gt, 1.0, true)?;
    let n = rendered.data.len() as f64;
    let l1 = rendered.data.iter().zip(&gt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let lam = ssim_weight;
    let sg = s.grad.as_ref().expect("gradient requested");
    let dimage = rendered
        .data
        .iter()
        .zip(&gt.data)
        .zip(sg)
        .map(|((a, b), g)| {
            let sign = if a > b { 1.0 } else if a < b { -1.0 } else { 0.0 };
            (1.0 - lam) * sign / n - lam * g
        })
        .collect();
    let q = (0..rendered.pixels())
        .map(|p| {
            let abs: f64 = (0..3).map(|c| (rendered.data[3 * p + c] - gt.data[3 * p + c]).abs()).sum::<f64>() / 3.0;
            ERROR_MAP_L1_WEIGHT * abs + (1.0 - ERROR_MAP_L1_WEIGHT) * (1.0 - s.map[p])
        })
        .collect();
    Ok(LossOutput { loss: (1.0 - lam) * l1 + lam * (1.0 - s.mean), l1, ssim: s.mean, dimage, q })
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `reg_static·Σ‖d‖ + reg_dynamic·Σ‖p_{n+1} − p_n‖`.
pub fn regularization(scene: &SceneModel, reg_static: f64, reg_dynamic: f64) -> f64 {
    let s: f64 = scene.statics.iter().map(|g| norm3(&g.translation)).sum();
    let d: f64 = scene
        .dynamics
        .iter()
        .map(|g| {
            g.track
                .positions
                .windows(2)
                .map(|w| norm3(&std::array::from_fn(|k| w[1][k] - w[0][k])))
                .sum::<f64>()
        })
        .sum();
    reg_static * s + reg_dynamic * d
}

/// Adds the regularizer gradient to `grad`. Zero-length vectors contribute
/// the zero subgradient.
pub fn regularization_backward(scene: &SceneModel, reg_static: f64, reg_dynamic: f64, grad: &mut SceneGrad) {
    for (g, out) in scene.statics.iter().zip(grad.statics.iter_mut()) {
        let n = norm3(&g.translation);
        if n > 0.0 {
            for k in 0..3 {
                out.translation[k] += reg_static * g.translation[k] / n;
            }
        }
    }
    for (g, out) in scene.dynamics.iter().zip(grad.dynamics.iter_mut()) {
        for i in 0..g.track.len().saturating_sub(1) {
            let diff: [f64; 3] = std::array::from_fn(|k| g.track.positions[i + 1][k] - g.track.positions[i][k]);
            let n = norm3(&diff);
            if n > 0.0 {
                for k in 0..3 {
                    let v = reg_dynamic * diff[k] / n;
                    out.positions[i + 1][k] += v;
                    out.positions[i][k] -= v;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss::{DynamicGaussian, GaussianCommon, KeyframeTrack, StaticGaussian, TemporalOpacity};
    use crate::quat::Quat;

    fn common() -> GaussianCommon {
        GaussianCommon { scale: [0.0; 3], rotation_base: Quat::IDENTITY, opacity_base: 0.0, sh_coeffs: vec![0.0; 3] }
    }

    fn gradient(w: usize, h: usize) -> Image {
        let data = (0..w * h * 3).map(|i| ((i * 7919) % 101) as f64 / 140.0 + 0.1).collect();
        Image::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let a = gradient(16, 16);
        let out = loss(&a, &a, 0.2).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.q.iter().all(|v| v.abs() < 1e-12));
        assert!(out.dimage.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_l1() {
        let a = gradient(16, 16);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v += 0.1);
        let out = loss(&a, &b, 0.2).unwrap();
        assert!((out.l1 - 0.1).abs() < 1e-12);
        let pure = loss(&a, &b, 0.0).unwrap();
        assert!((pure.loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn regularization_examples() {
        let mut scene = SceneModel::empty(20, 20, 10);
        assert_eq!(regularization(&scene, 1e-4, 1e-4), 0.0);
        scene.statics.push(StaticGaussian { common: common(), pivot: [0.0; 3], translation: [0.0, 1.0, 0.0] });
        assert!((regularization(&scene, 1e-4, 1e-4) - 1e-4).abs() < 1e-18);
        scene.statics.clear();
        scene.dynamics.push(DynamicGaussian {
            common: common(),
            track: KeyframeTrack {
                positions: vec![[0.0; 3], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
                rotations: vec![Quat::IDENTITY; 3],
                interval: 10,
            },
            temporal_opacity: TemporalOpacity::new(0.0, 0.5, 1.0, 0.5),
        });
        assert!((regularization(&scene, 1e-4, 3.0) - 6.0).abs() < 1e-12);
    }
}
