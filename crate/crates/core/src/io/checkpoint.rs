//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `KSPLTCKP`, a `u32` format version, then a
//! sequence of records `tag: u16, length: u64, payload`. Everything is
//! little-endian and floats are stored as IEEE-754 `f64`, so finite values
//! round-trip exactly. Readers skip tags they do not know.
//!
//! | tag | payload |
//! |-----|---------|
//! | 1 | training configuration, UTF-8 JSON |
//! | 2 | `iteration, duration, total_frames, keyframe_interval` as `u64` |
//! | 3 | statics: `u64` count, then per Gaussian `u32` SH length, pivot, translation, scale, rotation, opacity, SH |
//! | 4 | dynamics: `u64` count, then per Gaussian `u32` SH length, `u32` keyframes, `u32` interval, scale, base rotation, opacity, SH, `a_s, log_b_s, a_f, log_b_f`, keyframes as position + rotation |
//! | 5 | optimizer moments: for statics then dynamics, `u64` count and per slot `u32` length, `m`, `v` |

use std::path::Path;

use crate::error::{Error, Result};
use crate::gauss::{DynamicGaussian, GaussianCommon, KeyframeTrack, SceneModel, StaticGaussian, TemporalOpacity};
use crate::quat::Quat;
use crate::train::{TrainConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"KSPLTCKP";
pub const VERSION: u32 = 1;

const TAG_CONFIG: u16 = 1;
const TAG_META: u16 = 2;
const TAG_STATICS: u16 = 3;
const TAG_DYNAMICS: u16 = 4;
const TAG_MOMENTS: u16 = 5;

/// First and second moments per Gaussian, statics then dynamics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub statics: Vec<(Vec<f64>, Vec<f64>)>,
    pub dynamics: Vec<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub scene: SceneModel,
    pub config: TrainConfig,
    pub iteration: usize,
    pub moments: Option<Moments>,
}

impl Checkpoint {
    pub fn new(scene: SceneModel, config: TrainConfig, iteration: usize) -> Self {
        Checkpoint { version: VERSION, scene, config, iteration, moments: None }
    }

    pub fn from_state(state: &TrainState, with_moments: bool) -> Self {
        let moments = with_moments.then(|| Moments {
            statics: state.static_slots.iter().map(|s| (s.m.clone(), s.v.clone())).collect(),
            dynamics: state.dynamic_slots.iter().map(|s| (s.m.clone(), s.v.clone())).collect(),
        });
        Checkpoint { version: VERSION, scene: state.scene.clone(), config: state.config.clone(), iteration: state.iteration, moments }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        record(&mut out, TAG_CONFIG, &cfg);

        let mut w = Writer::default();
        for v in [self.iteration, self.scene.duration_frames, self.scene.total_frames, self.scene.keyframe_interval] {
            w.u64(v as u64);
        }
        record(&mut out, TAG_META, &w.0);

        let mut w = Writer::default();
        w.u64(self.scene.statics.len() as u64);
        for g in &self.scene.statics {
            w.u32(g.common.sh_coeffs.len() as u32);
            w.f64s(&g.pivot);
            w.f64s(&g.translation);
            w.f64s(&g.common.scale);
            w.f64s(&g.common.rotation_base.0);
            w.f64s(&[g.common.opacity_base]);
            w.f64s(&g.common.sh_coeffs);
        }
        record(&mut out, TAG_STATICS, &w.0);

        let mut w = Writer::default();
        w.u64(self.scene.dynamics.len() as u64);
        for g in &self.scene.dynamics {
            w.u32(g.common.sh_coeffs.len() as u32);
            w.u32(g.track.len() as u32);
            w.u32(g.track.interval as u32);
            w.f64s(&g.common.scale);
            w.f64s(&g.common.rotation_base.0);
            w.f64s(&[g.common.opacity_base]);
            w.f64s(&g.common.sh_coeffs);
            let o = &g.temporal_opacity;
            w.f64s(&[o.a_s, o.log_b_s, o.a_f, o.log_b_f]);
            for (p, r) in g.track.positions.iter().zip(&g.track.rotations) {
                w.f64s(p);
                w.f64s(&r.0);
            }
        }
        record(&mut out, TAG_DYNAMICS, &w.0);

        if let Some(m) = &self.moments {
            let mut w = Writer::default();
            for group in [&m.statics, &m.dynamics] {
                w.u64(group.len() as u64);
                for (a, b) in group {
                    w.u32(a.len() as u32);
                    w.f64s(a);
                    w.f64s(b);
                }
            }
            record(&mut out, TAG_MOMENTS, &w.0);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(perr(0, "not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(perr(8, format!("unsupported checkpoint version {version}")));
        }
        let mut pos = 12;
        let mut config = None;
        let mut meta = None;
        let mut statics = None;
        let mut dynamics = None;
        let mut moments = None;
        while pos < bytes.len() {
            if pos + 10 > bytes.len() {
                return Err(perr(pos, "truncated record header"));
            }
            let tag = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap());
            let len = u64::from_le_bytes(bytes[pos + 2..pos + 10].try_into().unwrap()) as usize;
            let start = pos + 10;
            let end = start.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| perr(pos, "truncated record"))?;
            let mut r = Reader { bytes: &bytes[start..end], pos: 0, base: start };
            match tag {
                TAG_CONFIG => {
                    config = Some(serde_json::from_slice::<TrainConfig>(r.bytes).map_err(|e| perr(start, e.to_string()))?)
                }
                TAG_META => meta = Some([r.u64()?, r.u64()?, r.u64()?, r.u64()?]),
                TAG_STATICS => statics = Some(read_statics(&mut r)?),
                TAG_DYNAMICS => dynamics = Some(read_dynamics(&mut r)?),
                TAG_MOMENTS => {
                    let mut groups = [Vec::new(), Vec::new()];
                    for g in &mut groups {
                        let n = r.u64()? as usize;
                        for _ in 0..n {
                            let k = r.u32()? as usize;
                            g.push((r.f64s(k)?, r.f64s(k)?));
                        }
                    }
                    let [s, d] = groups;
                    moments = Some(Moments { statics: s, dynamics: d });
                }
                _ => {}
            }
            pos = end;
        }
        let missing = |what: &str| perr(bytes.len(), format!("checkpoint lacks the {what} record"));
        let [iteration, duration, total, interval] = meta.ok_or_else(|| missing("metadata"))?;
        let scene = SceneModel {
            statics: statics.ok_or_else(|| missing("statics"))?,
            dynamics: dynamics.ok_or_else(|| missing("dynamics"))?,
            duration_frames: duration as usize,
            total_frames: total as usize,
            keyframe_interval: interval as usize,
        };
        Ok(Checkpoint {
            version,
            scene,
            config: config.ok_or_else(|| missing("config"))?,
            iteration: iteration as usize,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn record(out: &mut Vec<u8>, tag: u16, payload: &[u8]) {
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(perr(self.base + self.pos, "record payload too short"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(8 * n)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn arr<const N: usize>(&mut self) -> Result<[f64; N]> {
        Ok(self.f64s(N)?.try_into().unwrap())
    }
}

fn read_statics(r: &mut Reader) -> Result<Vec<StaticGaussian>> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let k = r.u32()? as usize;
        let pivot = r.arr::<3>()?;
        let translation = r.arr::<3>()?;
        let scale = r.arr::<3>()?;
        let rotation_base = Quat(r.arr::<4>()?);
        let opacity_base = r.arr::<1>()?[0];
        let sh_coeffs = r.f64s(k)?;
        out.push(StaticGaussian {
            common: GaussianCommon { scale, rotation_base, opacity_base, sh_coeffs },
            pivot,
            translation,
        });
    }
    Ok(out)
}

fn read_dynamics(r: &mut Reader) -> Result<Vec<DynamicGaussian>> {
    let n = r.u64()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let k = r.u32()? as usize;
        let keys = r.u32()? as usize;
        let interval = r.u32()? as usize;
        let scale = r.arr::<3>()?;
        let rotation_base = Quat(r.arr::<4>()?);
        let opacity_base = r.arr::<1>()?[0];
        let sh_coeffs = r.f64s(k)?;
        let [a_s, log_b_s, a_f, log_b_f] = r.arr::<4>()?;
        let mut positions = Vec::with_capacity(keys);
        let mut rotations = Vec::with_capacity(keys);
        for _ in 0..keys {
            positions.push(r.arr::<3>()?);
            rotations.push(Quat(r.arr::<4>()?));
        }
        out.push(DynamicGaussian {
            common: GaussianCommon { scale, rotation_base, opacity_base, sh_coeffs },
            track: KeyframeTrack { positions, rotations, interval },
            temporal_opacity: TemporalOpacity { a_s, log_b_s, a_f, log_b_f },
        });
    }
    Ok(out)
}
