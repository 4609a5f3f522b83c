//! Differentiable splatting renderer.
//!
//! A frame is rendered in three stages: [`realize`] evaluates every Gaussian
//! at a timestamp, [`project`] maps each into a camera, and
//! [`rasterize_forward`] composites them. [`backward_frame`] runs the chain
//! in reverse and scatters gradients onto scene parameters.

mod project;
mod raster;

pub use project::{project, project_backward, ProjectGrad, Splat2D, SplatGrad, DILATION, NEAR_PLANE};
pub use raster::{
    backtrack_errors, depth_order, rasterize_backward, rasterize_forward, reference_render, Backtracked,
    ForwardBuffers, RasterGrads, RasterSettings, RasterStats, RenderOutput,
};

use crate::error::{Error, Result};
use crate::gauss::{covariance_from, Camera, Population, SceneModel, SourceId};
use crate::interp::{self, TimeQuery};
use crate::quat::{rotation_matrix_backward, v3, Mat3, Quat, Vec3};

/// Dynamic Gaussians fainter than this (temporal factor) are not rendered.
pub const TEMPORAL_CULL: f64 = 0.005;

/// A Gaussian evaluated at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedGaussian<'a> {
    pub source: SourceId,
    pub mean: Vec3,
    /// Rotation as produced by the model (normalized when used).
    pub rotation: Quat,
    /// Effective per-axis standard deviations.
    pub scale: Vec3,
    pub cov: Mat3,
    /// `sigmoid(opacity_base) × temporal`.
    pub opacity: f64,
    pub temporal: f64,
    pub sh: &'a [f64],
}

/// Evaluates every Gaussian of `scene` at `frame`.
pub fn realize(scene: &SceneModel, frame: usize) -> Result<Vec<RealizedGaussian<'_>>> {
    if frame >= scene.duration_frames {
        return Err(Error::OutOfRange { frame, limit: scene.duration_frames });
    }
    let q = TimeQuery::at(frame, scene.duration_frames, scene.keyframe_interval);
    let mut out = Vec::with_capacity(scene.len());
    for (i, g) in scene.statics.iter().enumerate() {
        let scale = g.common.effective_scale();
        out.push(RealizedGaussian {
            source: SourceId::stat(i),
            mean: v3(interp::static_position(g, &q)),
            rotation: g.common.rotation_base,
            scale,
            cov: covariance_from(&g.common.rotation_base, &scale),
            opacity: g.common.opacity(),
            temporal: 1.0,
            sh: &g.common.sh_coeffs,
        });
    }
    for (i, g) in scene.dynamics.iter().enumerate() {
        let temporal = interp::temporal_opacity(&g.temporal_opacity, q.normalized);
        if temporal < TEMPORAL_CULL {
            continue;
        }
        let rotation = interp::track_rotation(&g.track, &q)?;
        let scale = g.common.effective_scale();
        out.push(RealizedGaussian {
            source: SourceId::dynamic(i),
            mean: v3(interp::track_position(&g.track, &q)?),
            rotation,
            scale,
            cov: covariance_from(&rotation, &scale),
            opacity: g.common.opacity() * temporal,
            temporal,
            sh: &g.common.sh_coeffs,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommonGrad {
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub sh: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StaticGrad {
    pub common: CommonGrad,
    pub pivot: [f64; 3],
    pub translation: [f64; 3],
}

/// Dynamic gradients. `common.rotation` stays zero: dynamic Gaussians take
/// their rotation from the keyframes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicGrad {
    pub common: CommonGrad,
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    /// `[a_s, log_b_s, a_f, log_b_f]`.
    pub temporal: [f64; 4],
}

/// Gradients shaped like a [`SceneModel`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGrad {
    pub statics: Vec<StaticGrad>,
    pub dynamics: Vec<DynamicGrad>,
}

impl SceneGrad {
    pub fn zeros_like(scene: &SceneModel) -> Self {
        let common = |n: usize| CommonGrad { sh: vec![0.0; n], ..Default::default() };
        SceneGrad {
            statics: scene
                .statics
                .iter()
                .map(|g| StaticGrad { common: common(g.common.sh_coeffs.len()), ..Default::default() })
                .collect(),
            dynamics: scene
                .dynamics
                .iter()
                .map(|g| DynamicGrad {
                    common: common(g.common.sh_coeffs.len()),
                    positions: vec![[0.0; 3]; g.track.len()],
                    rotations: vec![[0.0; 4]; g.track.len()],
                    temporal: [0.0; 4],
                })
                .collect(),
        }
    }

    /// Squared L2 norm over every entry.
    pub fn norm_sq(&self) -> f64 {
        let common = |c: &CommonGrad| {
            c.scale.iter().chain(&c.rotation).chain(&c.sh).map(|v| v * v).sum::<f64>() + c.opacity * c.opacity
        };
        let s: f64 = self
            .statics
            .iter()
            .map(|g| common(&g.common) + g.pivot.iter().chain(&g.translation).map(|v| v * v).sum::<f64>())
            .sum();
        let d: f64 = self
            .dynamics
            .iter()
            .map(|g| {
                common(&g.common)
                    + g.positions.iter().flatten().map(|v| v * v).sum::<f64>()
                    + g.rotations.iter().flatten().map(|v| v * v).sum::<f64>()
                    + g.temporal.iter().map(|v| v * v).sum::<f64>()
            })
            .sum();
        s + d
    }
}

/// `dL/dΣ` → `(dL/dlog_scale, dL/dq)` for `Σ = R S Sᵀ Rᵀ`.
pub fn covariance_backward(rotation: &Quat, scale: &Vec3, gcov: &Mat3) -> ([f64; 3], [f64; 4]) {
    let r = rotation.to_rotation_matrix();
    let s = Mat3::from_diagonal(scale);
    let gsym = 0.5 * (gcov + gcov.transpose());
    let gm = 2.0 * gsym * r * s;
    let rt_gm = r.transpose() * gm;
    let glog = [rt_gm[(0, 0)] * scale.x, rt_gm[(1, 1)] * scale.y, rt_gm[(2, 2)] * scale.z];
    let gr = gm * s;
    (glog, rotation_matrix_backward(rotation, &gr))
}

/// Everything produced by rendering one camera at one timestamp.
#[derive(Debug, Clone)]
pub struct FrameRender<'a> {
    pub query: TimeQuery,
    pub realized: Vec<RealizedGaussian<'a>>,
    pub splats: Vec<Splat2D>,
    pub output: RenderOutput,
}

pub fn render_frame<'a>(
    scene: &'a SceneModel,
    cam: &Camera,
    frame: usize,
    settings: &RasterSettings,
    retain: bool,
) -> Result<FrameRender<'a>> {
    let realized = realize(scene, frame)?;
    let splats: Vec<Splat2D> = realized
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project(g, i, cam))
        .collect();
    let output = rasterize_forward(&splats, cam.width, cam.height, settings, retain);
    Ok(FrameRender {
        query: TimeQuery::at(frame, scene.duration_frames, scene.keyframe_interval),
        realized,
        splats,
        output,
    })
}

/// Gradients and per-Gaussian auxiliaries from one backward pass.
#[derive(Debug, Clone)]
pub struct FrameBackward {
    pub grad: SceneGrad,
    /// Screen-space mean gradient of every rendered splat.
    pub screen_grad: Vec<(SourceId, [f64; 2])>,
    /// Backtracked error of every rendered splat, when an error map was given.
    pub backtrack: Option<Vec<(SourceId, Backtracked)>>,
}

/// Backpropagates `dL/dimage` to scene parameters.
pub fn backward_frame(
    scene: &SceneModel,
    cam: &Camera,
    fr: &FrameRender<'_>,
    dimage: &[f64],
    q: Option<&[f64]>,
) -> Result<FrameBackward> {
    let raster = rasterize_backward(&fr.output, dimage, q)?;
    let mut grad = SceneGrad::zeros_like(scene);
    let t_norm = fr.query.normalized;
    for (s, sg) in fr.splats.iter().zip(&raster.splats) {
        let g = &fr.realized[s.realized];
        let idx = s.source.index;
        match s.source.population {
            Population::Static => {
                let out = &mut grad.statics[idx];
                let pg = project_backward(g, cam, sg, &mut out.common.sh);
                let gmean = [pg.mean.x, pg.mean.y, pg.mean.z];
                let (gp, gd) = interp::static_position_backward(&fr.query, &gmean);
                for k in 0..3 {
                    out.pivot[k] += gp[k];
                    out.translation[k] += gd[k];
                }
                let (gs, gq) = covariance_backward(&g.rotation, &g.scale, &pg.cov);
                for k in 0..3 {
                    out.common.scale[k] += gs[k];
                }
                for k in 0..4 {
                    out.common.rotation[k] += gq[k];
                }
                let base = scene.statics[idx].common.opacity();
                out.common.opacity += pg.opacity * base * (1.0 - base);
            }
            Population::Dynamic => {
                let model = &scene.dynamics[idx];
                let out = &mut grad.dynamics[idx];
                let pg = project_backward(g, cam, sg, &mut out.common.sh);
                let gmean = [pg.mean.x, pg.mean.y, pg.mean.z];
                interp::track_position_backward(&model.track, &fr.query, &gmean, &mut out.positions)?;
                let (gs, gq) = covariance_backward(&g.rotation, &g.scale, &pg.cov);
                for k in 0..3 {
                    out.common.scale[k] += gs[k];
                }
                interp::track_rotation_backward(&model.track, &fr.query, &gq, &mut out.rotations)?;
                let base = model.common.opacity();
                out.common.opacity += pg.opacity * g.temporal * base * (1.0 - base);
                let gt = interp::temporal_opacity_grad(&model.temporal_opacity, t_norm);
                for k in 0..4 {
                    out.temporal[k] += pg.opacity * base * gt[k];
                }
            }
        }
    }
    let screen_grad = fr.splats.iter().zip(&raster.splats).map(|(s, g)| (s.source, g.mean_px)).collect();
    let backtrack = raster.error_sum.as_ref().map(|e| {
        let bt = raster::normalize_backtrack(&raster.weight_sum, e);
        fr.splats.iter().map(|s| s.source).zip(bt).collect()
    });
    Ok(FrameBackward { grad, screen_grad, backtrack })
}

/// Renders only the population `keep`, e.g. to inspect the static/dynamic
/// decomposition.
pub fn render_population(
    scene: &SceneModel,
    cam: &Camera,
    frame: usize,
    keep: Population,
    settings: &RasterSettings,
) -> Result<crate::img::Image> {
    let mut subset = scene.clone();
    match keep {
        Population::Static => subset.dynamics.clear(),
        Population::Dynamic => subset.statics.clear(),
    }
    Ok(render_frame(&subset, cam, frame, settings, false)?.output.image)
}

/// Convenience: render the full scene to an image.
pub fn render_image(
    scene: &SceneModel,
    cam: &Camera,
    frame: usize,
    settings: &RasterSettings,
) -> Result<crate::img::Image> {
    Ok(render_frame(scene, cam, frame, settings, false)?.output.image)
}
