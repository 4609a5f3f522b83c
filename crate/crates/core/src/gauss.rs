//! Scene representation: static and keyframed dynamic Gaussians, the scene
//! container and the pinhole camera.

use std::path::PathBuf;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::quat::{Mat3, Quat, Vec3};

/// Smallest allowed temporal-opacity width (normalized time).
pub const MIN_TEMPORAL_WIDTH: f64 = 1e-4;

const UNIT_TOL: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Number of scalars for spherical harmonics of the given degree.
pub fn sh_len(degree: usize) -> usize {
    3 * (degree + 1) * (degree + 1)
}

/// Degree for a coefficient vector of `len` scalars, if it is a valid length.
pub fn sh_degree_of(len: usize) -> Option<usize> {
    (0..=3).find(|&d| sh_len(d) == len)
}

/// Attributes shared by both populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCommon {
    /// Log of the per-axis standard deviations.
    pub scale: [f64; 3],
    pub rotation_base: Quat,
    /// Logit of the base opacity.
    pub opacity_base: f64,
    /// Coefficient-major SH colors: `sh_coeffs[3 * k + channel]`.
    pub sh_coeffs: Vec<f64>,
}

impl GaussianCommon {
    pub fn effective_scale(&self) -> Vec3 {
        Vec3::new(self.scale[0].exp(), self.scale[1].exp(), self.scale[2].exp())
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_base)
    }

    pub fn sh_degree(&self) -> usize {
        sh_degree_of(self.sh_coeffs.len()).unwrap_or(0)
    }
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(scale))`.
pub fn effective_covariance(g: &GaussianCommon) -> Mat3 {
    covariance_from(&g.rotation_base, &g.effective_scale())
}

pub(crate) fn covariance_from(rotation: &Quat, scale: &Vec3) -> Mat3 {
    let m = rotation.to_rotation_matrix() * Mat3::from_diagonal(scale);
    m * m.transpose()
}

/// Gaussian whose mean moves linearly over normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticGaussian {
    pub common: GaussianCommon,
    pub pivot: [f64; 3],
    /// Displacement over one full (normalized) duration.
    pub translation: [f64; 3],
}

/// Keyframed position and rotation, one entry per keyframe `n·interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeTrack {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<Quat>,
    pub interval: usize,
}

impl KeyframeTrack {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Last frame covered by the track.
    pub fn span_frames(&self) -> usize {
        self.len().saturating_sub(1) * self.interval
    }

    /// Flips rotation signs so consecutive keyframes share a hemisphere.
    pub fn align_rotations(&mut self) {
        for i in 1..self.rotations.len() {
            let prev = self.rotations[i - 1];
            self.rotations[i] = prev.aligned(&self.rotations[i]);
        }
    }

    pub fn normalize_rotations(&mut self) {
        for r in &mut self.rotations {
            *r = r.normalized();
        }
        self.align_rotations();
    }
}

/// Two half-Gaussians joined by a fully visible plateau `[a_s, a_f]`.
/// Widths are stored as logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalOpacity {
    pub a_s: f64,
    pub log_b_s: f64,
    pub a_f: f64,
    pub log_b_f: f64,
}

impl TemporalOpacity {
    pub fn new(a_s: f64, b_s: f64, a_f: f64, b_f: f64) -> Self {
        TemporalOpacity {
            a_s,
            log_b_s: b_s.ln(),
            a_f,
            log_b_f: b_f.ln(),
        }
    }

    pub fn b_s(&self) -> f64 {
        self.log_b_s.exp()
    }

    pub fn b_f(&self) -> f64 {
        self.log_b_f.exp()
    }

    /// Restores `a_s ≤ a_f` and the width floor.
    pub fn project(&mut self) {
        if self.a_s > self.a_f {
            std::mem::swap(&mut self.a_s, &mut self.a_f);
        }
        let floor = MIN_TEMPORAL_WIDTH.ln();
        self.log_b_s = self.log_b_s.max(floor);
        self.log_b_f = self.log_b_f.max(floor);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGaussian {
    pub common: GaussianCommon,
    pub track: KeyframeTrack,
    pub temporal_opacity: TemporalOpacity,
}

/// Both Gaussian populations plus the time bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub statics: Vec<StaticGaussian>,
    pub dynamics: Vec<DynamicGaussian>,
    /// Current training duration `l` in frames.
    pub duration_frames: usize,
    pub total_frames: usize,
    pub keyframe_interval: usize,
}

impl SceneModel {
    pub fn empty(duration_frames: usize, total_frames: usize, keyframe_interval: usize) -> Self {
        SceneModel {
            statics: Vec::new(),
            dynamics: Vec::new(),
            duration_frames,
            total_frames,
            keyframe_interval,
        }
    }

    pub fn len(&self) -> usize {
        self.statics.len() + self.dynamics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keyframes a track needs to cover the current duration.
    pub fn required_keyframes(&self) -> usize {
        required_keyframes(self.duration_frames, self.keyframe_interval)
    }
}

pub fn required_keyframes(duration: usize, interval: usize) -> usize {
    duration.div_ceil(interval) + 1
}

/// Which population a Gaussian belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    Static,
    Dynamic,
}

/// Population tag plus index; orders statics before dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub population: Population,
    pub index: usize,
}

impl SourceId {
    pub fn stat(index: usize) -> Self {
        SourceId {
            population: Population::Static,
            index,
        }
    }

    pub fn dynamic(index: usize) -> Self {
        SourceId {
            population: Population::Dynamic,
            index,
        }
    }
}

/// Pinhole camera with a rigid world-to-camera transform (row-major 4×4).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub id: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub w2c: [f64; 16],
}

impl Camera {
    /// Camera at `eye` looking at `target`; image `y` points along `-up`.
    pub fn look_at(
        id: usize,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rot = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut w2c = [0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                w2c[4 * r + c] = rot[(r, c)];
            }
            w2c[4 * r + 3] = t[r];
        }
        w2c[15] = 1.0;
        Camera {
            id,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            w2c,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.w2c;
        Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.w2c[3], self.w2c[7], self.w2c[11])
    }

    pub fn world_to_camera(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.w2c)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Checks orthonormality of the rotation block and positive focal lengths.
    pub fn validate(&self) -> Result<(), String> {
        let r = self.rotation();
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if err > 1e-6 {
            return Err(format!("camera {}: rotation not orthonormal ({err:e})", self.id));
        }
        if r.determinant() < 0.0 {
            return Err(format!("camera {}: rotation is a reflection", self.id));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("camera {}: focal lengths must be positive", self.id));
        }
        if self.width == 0 || self.height == 0 {
            return Err(format!("camera {}: empty image", self.id));
        }
        Ok(())
    }
}

/// A camera at a timestamp, optionally tied to its ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub camera: Camera,
    pub timestamp: usize,
    pub image_path: Option<PathBuf>,
}

/// A broken invariant found by [`validate_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// `None` for scene-level violations.
    pub source: Option<SourceId>,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    NonUnitRotation { norm: f64 },
    NonFinite,
    BadShLength { len: usize },
    TrackLengthMismatch { positions: usize, rotations: usize },
    TrackTooShort { keyframes: usize, required: usize },
    TrackIntervalMismatch { interval: usize },
    MisalignedRotations { keyframe: usize },
    OpacityWindowInverted { a_s: f64, a_f: f64 },
    WidthBelowFloor { width: f64 },
    DurationExceedsTotal { duration: usize, total: usize },
    ZeroInterval,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.source {
            Some(s) => write!(f, "{:?} #{}: {:?}", s.population, s.index, self.kind),
            None => write!(f, "scene: {:?}", self.kind),
        }
    }
}

fn check_common(g: &GaussianCommon, source: SourceId, out: &mut Vec<Violation>) {
    let mut push = |kind| out.push(Violation { source: Some(source), kind });
    let norm = g.rotation_base.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        push(ViolationKind::NonUnitRotation { norm });
    }
    if sh_degree_of(g.sh_coeffs.len()).is_none() {
        push(ViolationKind::BadShLength { len: g.sh_coeffs.len() });
    }
    let finite = g.scale.iter().all(|v| v.is_finite())
        && g.rotation_base.0.iter().all(|v| v.is_finite())
        && g.opacity_base.is_finite()
        && g.sh_coeffs.iter().all(|v| v.is_finite());
    if !finite {
        push(ViolationKind::NonFinite);
    }
}

/// Lists every broken invariant; empty means the scene is valid.
pub fn validate_scene(s: &SceneModel) -> Vec<Violation> {
    let mut out = Vec::new();
    if s.keyframe_interval == 0 {
        out.push(Violation { source: None, kind: ViolationKind::ZeroInterval });
        return out;
    }
    if s.duration_frames > s.total_frames {
        out.push(Violation {
            source: None,
            kind: ViolationKind::DurationExceedsTotal {
                duration: s.duration_frames,
                total: s.total_frames,
            },
        });
    }
    for (i, g) in s.statics.iter().enumerate() {
        let id = SourceId::stat(i);
        check_common(&g.common, id, &mut out);
        if !g.pivot.iter().chain(g.translation.iter()).all(|v| v.is_finite()) {
            out.push(Violation { source: Some(id), kind: ViolationKind::NonFinite });
        }
    }
    let required = s.required_keyframes();
    for (i, g) in s.dynamics.iter().enumerate() {
        let id = SourceId::dynamic(i);
        let mut push = |kind| out.push(Violation { source: Some(id), kind });
        let t = &g.track;
        if t.positions.len() != t.rotations.len() {
            push(ViolationKind::TrackLengthMismatch {
                positions: t.positions.len(),
                rotations: t.rotations.len(),
            });
        }
        if t.interval != s.keyframe_interval {
            push(ViolationKind::TrackIntervalMismatch { interval: t.interval });
        }
        if t.len() < required {
            push(ViolationKind::TrackTooShort { keyframes: t.len(), required });
        }
        for r in &t.rotations {
            let norm = r.norm();
            if (norm - 1.0).abs() > UNIT_TOL {
                push(ViolationKind::NonUnitRotation { norm });
            }
        }
        for k in 1..t.rotations.len() {
            if t.rotations[k - 1].dot(&t.rotations[k]) < 0.0 {
                push(ViolationKind::MisalignedRotations { keyframe: k });
            }
        }
        if !t.positions.iter().flatten().all(|v| v.is_finite()) {
            push(ViolationKind::NonFinite);
        }
        let o = &g.temporal_opacity;
        if o.a_s > o.a_f {
            push(ViolationKind::OpacityWindowInverted { a_s: o.a_s, a_f: o.a_f });
        }
        for width in [o.b_s(), o.b_f()] {
            // Allow for the round trip through the log domain.
            if width < MIN_TEMPORAL_WIDTH * (1.0 - 1e-12) {
                push(ViolationKind::WidthBelowFloor { width });
            }
        }
        check_common(&g.common, id, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn common(scale: [f64; 3], rotation: Quat) -> GaussianCommon {
        GaussianCommon {
            scale: scale.map(f64::ln),
            rotation_base: rotation,
            opacity_base: 0.0,
            sh_coeffs: vec![0.0; 3],
        }
    }

    #[test]
    fn covariance_identity() {
        let c = effective_covariance(&common([1.0, 1.0, 1.0], Quat::IDENTITY));
        assert!((c - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn covariance_diagonal_squares() {
        let c = effective_covariance(&common([2.0, 1.0, 1.0], Quat::IDENTITY));
        assert!((c - Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).norm() < 1e-14);
    }

    #[test]
    fn covariance_quarter_turn_about_z() {
        // R = [[0,-1,0],[1,0,0],[0,0,1]]; R diag(4,1,1) Rᵀ = diag(1,4,1).
        let q = Quat::from_axis_angle(Vec3::z(), FRAC_PI_2);
        let c = effective_covariance(&common([2.0, 1.0, 1.0], q));
        assert!((c - Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0))).norm() < 1e-14);
    }

    fn valid_scene() -> SceneModel {
        let mut s = SceneModel::empty(10, 20, 10);
        s.statics.push(StaticGaussian {
            common: common([0.1, 0.1, 0.1], Quat::IDENTITY),
            pivot: [0.0; 3],
            translation: [0.0; 3],
        });
        s.dynamics.push(DynamicGaussian {
            common: common([0.1, 0.1, 0.1], Quat::IDENTITY),
            track: KeyframeTrack {
                positions: vec![[0.0; 3]; 2],
                rotations: vec![Quat::IDENTITY; 2],
                interval: 10,
            },
            temporal_opacity: TemporalOpacity::new(0.0, 0.1, 1.0, 0.1),
        });
        s
    }

    #[test]
    fn fresh_scene_is_valid() {
        assert!(validate_scene(&valid_scene()).is_empty());
    }

    #[test]
    fn non_unit_quaternion_is_reported_once() {
        let mut s = valid_scene();
        s.statics[0].common.rotation_base = Quat::new(2.0, 0.0, 0.0, 0.0);
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].source, Some(SourceId::stat(0)));
        assert!(matches!(v[0].kind, ViolationKind::NonUnitRotation { .. }));
    }

    #[test]
    fn inverted_window_is_reported_once() {
        let mut s = valid_scene();
        s.dynamics[0].temporal_opacity.a_s = 0.8;
        s.dynamics[0].temporal_opacity.a_f = 0.2;
        let v = validate_scene(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].source, Some(SourceId::dynamic(0)));
        assert!(matches!(v[0].kind, ViolationKind::OpacityWindowInverted { .. }));
    }

    #[test]
    fn short_track_is_reported() {
        let mut s = valid_scene();
        s.duration_frames = 20;
        let v = validate_scene(&s);
        assert!(v.iter().any(|v| matches!(v.kind, ViolationKind::TrackTooShort { .. })));
    }

    #[test]
    fn projection_swaps_and_floors() {
        let mut o = TemporalOpacity::new(0.7, 1e-9, 0.2, 0.5);
        o.project();
        assert_eq!((o.a_s, o.a_f), (0.2, 0.7));
        assert!((o.b_s() - MIN_TEMPORAL_WIDTH).abs() < 1e-15);
    }

    #[test]
    fn look_at_camera_sees_target_on_axis() {
        let cam = Camera::look_at(
            0,
            Vec3::new(3.0, 1.0, -2.0),
            Vec3::zeros(),
            Vec3::y(),
            50.0,
            64,
            64,
        );
        cam.validate().unwrap();
        let p = cam.to_camera(&Vec3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((cam.center() - Vec3::new(3.0, 1.0, -2.0)).norm() < 1e-12);
    }
}
