//! PSNR and SSIM.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5) applied separably with zero
//! padding, so the per-pixel map has the same size as the image. The same
//! map feeds the training loss and error backtracking, which is why the
//! gradient w.r.t. the first image is exposed too.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::{Camera, SceneModel};
use crate::img::Image;
use crate::render::{render_image, RasterSettings};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (data_range * data_range / m).log10()).min(PSNR_CAP))
}

fn window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable "same" correlation with zero padding. The kernel is symmetric,
/// so this operator is its own adjoint.
fn blur(src: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += kv * row[xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += kv * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

/// SSIM of two images.
#[derive(Debug, Clone)]
pub struct SsimResult {
    /// Mean over pixels and channels.
    pub mean: f64,
    /// Per-pixel SSIM averaged over channels.
    pub map: Vec<f64>,
    /// `d mean / d a`, interleaved like the image, when requested.
    pub grad: Option<Vec<f64>>,
}

fn check(a: &Image, b: &Image) -> Result<()> {
    a.same_shape(b)?;
    if a.width.min(a.height) < SSIM_WINDOW {
        return Err(Error::TooSmall { width: a.width, height: a.height });
    }
    Ok(())
}

/// Full SSIM evaluation; `with_grad` adds the gradient w.r.t. `a`.
pub fn ssim_full(a: &Image, b: &Image, data_range: f64, with_grad: bool) -> Result<SsimResult> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let k = window();
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut map = vec![0.0; n];
    let mut total = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; 3 * n]);
    let upstream = 1.0 / (3 * n) as f64;

    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let e_xx = blur(&xx, w, h, &k);
        let e_yy = blur(&yy, w, h, &k);
        let e_xy = blur(&xy, w, h, &k);

        let mut g_mu = vec![0.0; n];
        let mut g_exx = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for p in 0..n {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let sxx = e_xx[p] - mx * mx;
            let syy = e_yy[p] - my * my;
            let sxy = e_xy[p] - mx * my;
            let a1 = 2.0 * mx * my + c1;
            let a2 = 2.0 * sxy + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = sxx + syy + c2;
            let s = a1 * a2 / (b1 * b2);
            map[p] += s / 3.0;
            total += s;
            if with_grad {
                let d_a1 = a2 / (b1 * b2);
                let d_a2 = a1 / (b1 * b2);
                let d_b1 = -s / b1;
                let d_b2 = -s / b2;
                g_mu[p] = upstream
                    * (d_a1 * 2.0 * my + d_a2 * (-2.0 * my) + d_b1 * 2.0 * mx + d_b2 * (-2.0 * mx));
                g_exx[p] = upstream * d_b2;
                g_exy[p] = upstream * 2.0 * d_a2;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let t_mu = blur(&g_mu, w, h, &k);
            let t_xx = blur(&g_exx, w, h, &k);
            let t_xy = blur(&g_exy, w, h, &k);
            for p in 0..n {
                grad[3 * p + c] = t_mu[p] + 2.0 * x[p] * t_xx[p] + y[p] * t_xy[p];
            }
        }
    }
    Ok(SsimResult { mean: total / (3 * n) as f64, map, grad })
}

/// Mean SSIM.
pub fn ssim(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    Ok(ssim_full(a, b, data_range, false)?.mean)
}

/// Per-pixel SSIM (channel average).
pub fn ssim_map(a: &Image, b: &Image, data_range: f64) -> Result<Vec<f64>> {
    Ok(ssim_full(a, b, data_range, false)?.map)
}

/// Mean image quality of a scene over a set of views. SSIM is reported
/// with data ranges 1 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub psnr: f64,
    pub ssim1: f64,
    pub ssim2: f64,
    pub views: usize,
}

/// Renders every frame of `cameras` and compares against `truth`, which is
/// camera-major like [`crate::train::TrainingSet`]. With `quantize` the
/// renders are rounded to 8 bits first, as if read back from PNG.
pub fn evaluate(scene: &SceneModel, cameras: &[Camera], truth: &[Image], quantize: bool) -> Result<Evaluation> {
    let frames = scene.total_frames;
    if truth.len() != cameras.len() * frames {
        return Err(Error::shape(format!("{} images", cameras.len() * frames), truth.len()));
    }
    let settings = RasterSettings::default();
    let scores = (0..truth.len())
        .into_par_iter()
        .map(|i| {
            let mut im = render_image(scene, &cameras[i / frames], i % frames, &settings)?;
            if quantize {
                im = Image::from_rgb8(im.width, im.height, &im.to_rgb8())?;
            }
            let gt = &truth[i];
            Ok([psnr(&im, gt, 1.0)?, ssim(&im, gt, 1.0)?, ssim(&im, gt, 2.0)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    let mean = |k: usize| scores.iter().map(|s| s[k]).sum::<f64>() / n;
    Ok(Evaluation { psnr: mean(0), ssim1: mean(1), ssim2: mean(2), views: scores.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut s = seed;
        let data = (0..w * h * 3)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Image::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, [0.2; 3]);
        let b = Image::filled(4, 4, [0.3; 3]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&a, &b, 2.0).unwrap() - 26.020599913279625).abs() < 1e-9);
        assert!(psnr(&a, &Image::new(3, 4), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = noise(16, 16, 7);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let mut bin = a.clone();
        bin.data.iter_mut().for_each(|v| *v = if *v > 0.5 { 1.0 } else { 0.0 });
        let mut inv = bin.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ssim(&bin, &inv, 1.0).unwrap() < 0.0);
    }

    /// Reference values come from a scipy `correlate2d` implementation.
    #[test]
    fn frozen_values_on_smooth_pair() {
        let mut a = Image::new(16, 16);
        let mut b = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                for c in 0..3 {
                    let (xf, yf, cf) = (x as f64, y as f64, c as f64);
                    a.data[(y * 16 + x) * 3 + c] = 0.5 + 0.4 * (0.7 * xf + 1.3 * yf + cf).sin();
                    b.data[(y * 16 + x) * 3 + c] = 0.5 + 0.4 * (0.5 * xf - 0.9 * yf + 2.0 * cf).cos();
                }
            }
        }
        assert!((ssim(&a, &b, 1.0).unwrap() - 0.24036252067251226).abs() < 1e-12);
        assert!((psnr(&a, &b, 1.0).unwrap() - 8.079206430427222).abs() < 1e-10);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = noise(13, 12, 1);
        let b = noise(13, 12, 2);
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-14);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = noise(10, 20, 1);
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = noise(12, 11, 3);
        let b = noise(12, 11, 4);
        let res = ssim_full(&a, &b, 1.0, true).unwrap();
        let g = res.grad.unwrap();
        let h = 1e-6;
        for i in [0, 5, 17, 100, 200, 395] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (ssim(&p, &b, 1.0).unwrap() - ssim(&m, &b, 1.0).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8 * (1.0 + fd.abs() * 1e3), "{i}: {fd} vs {}", g[i]);
        }
    }
}
