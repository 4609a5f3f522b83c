//! Tile-based front-to-back alpha compositing and its adjoint.
//!
//! Splats are sorted once by depth (ties by source id) and binned into
//! 16×16 tiles, so every tile list is already depth ordered. Tiles are
//! processed in parallel; per-splat accumulators are produced per tile and
//! reduced in tile order, which keeps results bit-identical for any thread
//! count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;

use super::project::{Splat2D, SplatGrad};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterSettings {
    /// Upper clamp on per-pixel alpha.
    pub alpha_max: f64,
    /// Contributions below this alpha are skipped.
    pub alpha_min: f64,
    /// A pixel stops compositing once transmittance drops below this.
    pub t_min: f64,
    pub background: [f64; 3],
    pub tile_size: usize,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            alpha_max: 0.99,
            alpha_min: 1.0 / 255.0,
            t_min: 1e-4,
            background: [0.0; 3],
            tile_size: 16,
        }
    }
}

impl RasterSettings {
    /// Skip and early-termination thresholds disabled.
    pub fn exact() -> Self {
        RasterSettings {
            alpha_min: 0.0,
            t_min: 0.0,
            ..Default::default()
        }
    }
}

/// State kept from the forward pass so the backward pass can replay it.
#[derive(Debug, Clone)]
pub struct ForwardBuffers {
    pub splats: Vec<Splat2D>,
    pub tiles: Vec<Vec<u32>>,
    pub final_t: Vec<f64>,
    /// Number of tile-list entries each pixel visited.
    pub n_contrib: Vec<u32>,
    pub settings: RasterSettings,
}

/// Per-tile splat counts and wall time, for the performance harness.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RasterStats {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub splats_per_tile: Vec<usize>,
    pub forward_micros: u128,
}

impl RasterStats {
    /// One JSON record per tile.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.splats_per_tile.iter().enumerate() {
            let rec = serde_json::json!({
                "tile_x": i % self.tiles_x.max(1),
                "tile_y": i / self.tiles_x.max(1),
                "splats": n,
                "forward_micros": self.forward_micros,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    /// Accumulated opacity `1 − T_final` per pixel.
    pub alpha: Vec<f64>,
    /// Sum over pixels of each splat's blending weight `α·T`.
    pub weight_sum: Vec<f64>,
    /// Sum over pixels of `α·T·q`, present after error backtracking.
    pub error_sum: Option<Vec<f64>>,
    pub buffers: Option<ForwardBuffers>,
    pub stats: RasterStats,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }
}

/// Depth order with deterministic tie-breaking.
pub fn depth_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (&splats[a], &splats[b]);
        sa.depth
            .total_cmp(&sb.depth)
            .then(sa.source.cmp(&sb.source))
            .then(a.cmp(&b))
    });
    order
}

/// Pixel-index range a splat can reach along one axis. The reach is where
/// `opacity·exp(−r²/2λ)` falls below `alpha_min`, so binning never drops a
/// contribution that the compositing loop would keep.
fn reach(s: &Splat2D, settings: &RasterSettings) -> Option<f64> {
    if settings.alpha_min <= 0.0 {
        return Some(f64::INFINITY);
    }
    if s.opacity < settings.alpha_min {
        return None;
    }
    let ratio = (s.opacity / settings.alpha_min).ln().max(0.0);
    Some((2.0 * ratio * s.max_eigenvalue()).sqrt())
}

fn pixel_span(center: f64, r: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (center - r - 0.5).ceil().max(0.0);
    let hi = (center + r - 0.5).floor().min(n as f64 - 1.0);
    if lo > hi {
        None
    } else {
        Some((lo as usize, hi as usize))
    }
}

fn bin(splats: &[Splat2D], width: usize, height: usize, settings: &RasterSettings) -> (usize, usize, Vec<Vec<u32>>) {
    let ts = settings.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for idx in depth_order(splats) {
        let s = &splats[idx];
        let Some(r) = reach(s, settings) else { continue };
        let Some((x0, x1)) = pixel_span(s.mean_px[0], r, width) else { continue };
        let Some((y0, y1)) = pixel_span(s.mean_px[1], r, height) else { continue };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(idx as u32);
            }
        }
    }
    (tiles_x, tiles_y, tiles)
}

/// Exponent below which a splat's alpha is under `alpha_min`.
fn power_cutoff(s: &Splat2D, st: &RasterSettings) -> f64 {
    if st.alpha_min > 0.0 {
        (st.alpha_min / s.opacity).ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Gaussian falloff at a pixel center, or `None` when the alpha would be
/// skipped anyway. Saves most `exp` calls in the tails.
#[inline]
fn falloff(s: &Splat2D, cutoff: f64, px: f64, py: f64) -> Option<(f64, f64, f64)> {
    let dx = px - s.mean_px[0];
    let dy = py - s.mean_px[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    if power < cutoff - 1e-9 {
        return None;
    }
    Some((power.exp(), dx, dy))
}

struct TileForward {
    color: Vec<[f64; 3]>,
    final_t: Vec<f64>,
    n_contrib: Vec<u32>,
    weights: Vec<f64>,
}

struct TileRect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

fn tile_rect(tile: usize, tiles_x: usize, width: usize, height: usize, ts: usize) -> TileRect {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    TileRect {
        x0: tx * ts,
        y0: ty * ts,
        x1: ((tx + 1) * ts).min(width),
        y1: ((ty + 1) * ts).min(height),
    }
}

fn forward_tile(splats: &[Splat2D], list: &[u32], rect: &TileRect, st: &RasterSettings) -> TileForward {
    let n_px = (rect.x1 - rect.x0) * (rect.y1 - rect.y0);
    let mut out = TileForward {
        color: Vec::with_capacity(n_px),
        final_t: Vec::with_capacity(n_px),
        n_contrib: Vec::with_capacity(n_px),
        weights: vec![0.0; list.len()],
    };
    let cut: Vec<f64> = list.iter().map(|&si| power_cutoff(&splats[si as usize], st)).collect();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut visited = 0;
            for (k, &si) in list.iter().enumerate() {
                let s = &splats[si as usize];
                visited = k + 1;
                let Some((g, _, _)) = falloff(s, cut[k], px, py) else { continue };
                let alpha = (s.opacity * g).min(st.alpha_max);
                if alpha < st.alpha_min {
                    continue;
                }
                let w = alpha * t;
                for ch in 0..3 {
                    c[ch] += w * s.color[ch];
                }
                out.weights[k] += w;
                t *= 1.0 - alpha;
                if t < st.t_min {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * st.background[ch];
            }
            out.color.push(c);
            out.final_t.push(t);
            out.n_contrib.push(visited as u32);
        }
    }
    out
}

/// Composites depth-sorted splats into an image. With `retain` the forward
/// buffers needed by [`rasterize_backward`] are kept.
pub fn rasterize_forward(
    splats: &[Splat2D],
    width: usize,
    height: usize,
    settings: &RasterSettings,
    retain: bool,
) -> RenderOutput {
    let start = Instant::now();
    let ts = settings.tile_size.max(1);
    let (tiles_x, tiles_y, tiles) = bin(splats, width, height, settings);

    let results: Vec<TileForward> = tiles
        .par_iter()
        .enumerate()
        .map(|(i, list)| forward_tile(splats, list, &tile_rect(i, tiles_x, width, height, ts), settings))
        .collect();

    let mut image = Image::new(width, height);
    let mut alpha = vec![0.0; width * height];
    let mut final_t = vec![1.0; width * height];
    let mut n_contrib = vec![0u32; width * height];
    let mut weight_sum = vec![0.0; splats.len()];
    for (i, res) in results.iter().enumerate() {
        let r = tile_rect(i, tiles_x, width, height, ts);
        let mut p = 0;
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let idx = y * width + x;
                image.data[3 * idx..3 * idx + 3].copy_from_slice(&res.color[p]);
                alpha[idx] = 1.0 - res.final_t[p];
                final_t[idx] = res.final_t[p];
                n_contrib[idx] = res.n_contrib[p];
                p += 1;
            }
        }
        for (k, &si) in tiles[i].iter().enumerate() {
            weight_sum[si as usize] += res.weights[k];
        }
    }
    let stats = RasterStats {
        tiles_x,
        tiles_y,
        splats_per_tile: tiles.iter().map(Vec::len).collect(),
        forward_micros: start.elapsed().as_micros(),
    };
    RenderOutput {
        image,
        alpha,
        weight_sum,
        error_sum: None,
        buffers: retain.then(|| ForwardBuffers {
            splats: splats.to_vec(),
            tiles,
            final_t,
            n_contrib,
            settings: *settings,
        }),
        stats,
    }
}

/// Result of the backward pass.
#[derive(Debug, Clone)]
pub struct RasterGrads {
    pub splats: Vec<SplatGrad>,
    pub weight_sum: Vec<f64>,
    pub error_sum: Option<Vec<f64>>,
}

struct TileBackward {
    grads: Vec<SplatGrad>,
    weights: Vec<f64>,
    errors: Vec<f64>,
}

struct Contribution {
    k: usize,
    alpha: f64,
    t: f64,
    g: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

fn backward_tile(
    buf: &ForwardBuffers,
    tile: usize,
    rect: &TileRect,
    width: usize,
    dimage: Option<&[f64]>,
    q: Option<&[f64]>,
) -> TileBackward {
    let list = &buf.tiles[tile];
    let st = &buf.settings;
    let mut out = TileBackward {
        grads: if dimage.is_some() { vec![SplatGrad::default(); list.len()] } else { Vec::new() },
        weights: vec![0.0; list.len()],
        errors: if q.is_some() { vec![0.0; list.len()] } else { Vec::new() },
    };
    let cut: Vec<f64> = list.iter().map(|&si| power_cutoff(&buf.splats[si as usize], st)).collect();
    let mut scratch: Vec<Contribution> = Vec::new();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            let idx = y * width + x;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            scratch.clear();
            let mut t = 1.0;
            for k in 0..buf.n_contrib[idx] as usize {
                let s = &buf.splats[list[k] as usize];
                let Some((g, dx, dy)) = falloff(s, cut[k], px, py) else { continue };
                let raw = s.opacity * g;
                let alpha = raw.min(st.alpha_max);
                if alpha < st.alpha_min {
                    continue;
                }
                scratch.push(Contribution { k, alpha, t, g, dx, dy, clamped: raw > st.alpha_max });
                t *= 1.0 - alpha;
                if t < st.t_min {
                    break;
                }
            }
            for c in &scratch {
                let w = c.alpha * c.t;
                out.weights[c.k] += w;
                if let Some(q) = q {
                    out.errors[c.k] += w * q[idx];
                }
            }
            let Some(dimage) = dimage else { continue };
            let gpix = [dimage[3 * idx], dimage[3 * idx + 1], dimage[3 * idx + 2]];
            // Color composited behind the current splat, background included.
            let mut behind = st.background;
            for c in scratch.iter().rev() {
                let s = &buf.splats[list[c.k] as usize];
                let mut galpha = 0.0;
                for ch in 0..3 {
                    galpha += gpix[ch] * (s.color[ch] - behind[ch]);
                }
                galpha *= c.t;
                let grad = &mut out.grads[c.k];
                for ch in 0..3 {
                    grad.color[ch] += c.alpha * c.t * gpix[ch];
                    behind[ch] = c.alpha * s.color[ch] + (1.0 - c.alpha) * behind[ch];
                }
                if c.clamped {
                    continue;
                }
                grad.opacity += galpha * c.g;
                let gpow = galpha * c.alpha;
                let [a, b, cc] = s.conic;
                grad.mean_px[0] += gpow * (a * c.dx + b * c.dy);
                grad.mean_px[1] += gpow * (b * c.dx + cc * c.dy);
                grad.conic[0] += gpow * (-0.5 * c.dx * c.dx);
                grad.conic[1] += gpow * (-c.dx * c.dy);
                grad.conic[2] += gpow * (-0.5 * c.dy * c.dy);
            }
        }
    }
    out
}

fn replay(out: &RenderOutput, dimage: Option<&[f64]>, q: Option<&[f64]>) -> Result<RasterGrads> {
    let buf = out
        .buffers
        .as_ref()
        .ok_or(Error::State("forward pass ran without retained buffers"))?;
    let (w, h) = (out.width(), out.height());
    if let Some(d) = dimage {
        if d.len() != w * h * 3 {
            return Err(Error::shape(w * h * 3, d.len()));
        }
    }
    if let Some(q) = q {
        if q.len() != w * h {
            return Err(Error::shape(w * h, q.len()));
        }
    }
    let ts = buf.settings.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let results: Vec<TileBackward> = (0..buf.tiles.len())
        .into_par_iter()
        .map(|i| backward_tile(buf, i, &tile_rect(i, tiles_x, w, h, ts), w, dimage, q))
        .collect();

    let n = buf.splats.len();
    let mut grads = vec![SplatGrad::default(); if dimage.is_some() { n } else { 0 }];
    let mut weight_sum = vec![0.0; n];
    let mut error_sum = q.map(|_| vec![0.0; n]);
    for (i, res) in results.iter().enumerate() {
        for (k, &si) in buf.tiles[i].iter().enumerate() {
            let si = si as usize;
            weight_sum[si] += res.weights[k];
            if let Some(e) = error_sum.as_mut() {
                e[si] += res.errors[k];
            }
            if !res.grads.is_empty() {
                grads[si].add(&res.grads[k]);
            }
        }
    }
    Ok(RasterGrads { splats: grads, weight_sum, error_sum })
}

/// Gradients of the loss w.r.t. every splat's screen-space mean, conic,
/// color and opacity, given `dL/dimage`. Optionally backtracks a per-pixel
/// error map in the same pass.
pub fn rasterize_backward(out: &RenderOutput, dimage: &[f64], q: Option<&[f64]>) -> Result<RasterGrads> {
    replay(out, Some(dimage), q)
}

/// Per-splat error attributed through blending weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backtracked {
    /// Weight-normalized mean of the error map; 0 when invisible.
    pub error: f64,
    pub weight: f64,
    pub visible: bool,
}

pub(crate) fn normalize_backtrack(weight_sum: &[f64], error_sum: &[f64]) -> Vec<Backtracked> {
    weight_sum
        .iter()
        .zip(error_sum)
        .map(|(&w, &e)| {
            if w > 0.0 {
                Backtracked { error: e / w, weight: w, visible: true }
            } else {
                Backtracked { error: 0.0, weight: 0.0, visible: false }
            }
        })
        .collect()
}

/// Distributes a per-pixel error map onto splats: each splat receives the
/// blending-weight-weighted mean of `q` over the pixels it touches.
pub fn backtrack_errors(out: &mut RenderOutput, q: &[f64]) -> Result<Vec<Backtracked>> {
    let res = replay(out, None, Some(q))?;
    let errors = res.error_sum.expect("error map requested");
    let bt = normalize_backtrack(&res.weight_sum, &errors);
    out.error_sum = Some(errors);
    Ok(bt)
}

/// Naive compositor: global depth sort, every splat at every pixel, no skip
/// or early termination. Serial; used as an oracle.
pub fn reference_render(splats: &[Splat2D], width: usize, height: usize, settings: &RasterSettings) -> Image {
    let order = depth_order(splats);
    let mut image = Image::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &i in &order {
                let s = &splats[i];
                let dx = px - s.mean_px[0];
                let dy = py - s.mean_px[1];
                let [a, b, cc] = s.conic;
                let g = (-0.5 * (a * dx * dx + cc * dy * dy) - b * dx * dy).exp();
                let alpha = (s.opacity * g).min(settings.alpha_max);
                for ch in 0..3 {
                    c[ch] += t * alpha * s.color[ch];
                }
                t *= 1.0 - alpha;
            }
            let i = 3 * (y * width + x);
            for ch in 0..3 {
                image.data[i + ch] = c[ch] + t * settings.background[ch];
            }
        }
    }
    image
}
