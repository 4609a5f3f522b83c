//! `render` and `separate`: which cameras and frames to draw, and drawing them.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use keysplat::io::synth::{label_agreement, load_labels, FAINT_OPACITY};
use keysplat::io::{image_path, Checkpoint, DatasetManifest};
use keysplat::render::{render_frame, render_population, RasterSettings};
use keysplat::{Camera, Image, Population, SceneModel};
use rayon::prelude::*;
use serde::Deserialize;

#[derive(Args, Debug, Clone)]
pub struct ViewArgs {
    /// Take cameras from this dataset
    #[arg(long, conflicts_with = "cameras")]
    pub data: Option<PathBuf>,
    /// Camera JSON file: one camera or a list
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// Only these camera ids
    #[arg(long, value_delimiter = ',')]
    pub camera_ids: Vec<usize>,
    /// Frames to render; all trained frames by default
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Layer {
    Full,
    Static,
    Dynamic,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraFile {
    One(Camera),
    Many(Vec<Camera>),
}

impl ViewArgs {
    fn manifest(&self) -> Result<Option<DatasetManifest>> {
        self.data.as_deref().map(DatasetManifest::load).transpose().map_err(Into::into)
    }

    fn cameras(&self, manifest: Option<&DatasetManifest>) -> Result<Vec<Camera>> {
        let all = match (manifest, &self.cameras) {
            (Some(m), _) => m.cameras.clone(),
            (None, Some(p)) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                match serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))? {
                    CameraFile::One(c) => vec![c],
                    CameraFile::Many(v) => v,
                }
            }
            (None, None) => bail!("pass --data or --cameras"),
        };
        for c in &all {
            c.validate().map_err(|e| anyhow::anyhow!("camera {}: {e}", c.id))?;
        }
        if self.camera_ids.is_empty() {
            return Ok(all);
        }
        self.camera_ids
            .iter()
            .map(|id| all.iter().find(|c| c.id == *id).cloned().with_context(|| format!("no camera with id {id}")))
            .collect()
    }

    fn frames(&self, scene: &SceneModel) -> Result<Vec<usize>> {
        if self.frames.is_empty() {
            return Ok((0..scene.duration_frames).collect());
        }
        if let Some(t) = self.frames.iter().find(|&&t| t >= scene.duration_frames) {
            bail!("frame {t} is outside the {} trained frames", scene.duration_frames);
        }
        Ok(self.frames.clone())
    }
}

fn jobs(cameras: &[Camera], frames: &[usize]) -> Vec<(usize, usize)> {
    (0..cameras.len()).flat_map(|c| frames.iter().map(move |&t| (c, t))).collect()
}

fn draw(scene: &SceneModel, cam: &Camera, frame: usize, layer: Layer, settings: &RasterSettings) -> keysplat::Result<Image> {
    match layer {
        Layer::Full => keysplat::render::render_image(scene, cam, frame, settings),
        Layer::Static => render_population(scene, cam, frame, Population::Static, settings),
        Layer::Dynamic => render_population(scene, cam, frame, Population::Dynamic, settings),
    }
}

pub fn render(checkpoint: &Path, out: &Path, views: &ViewArgs, layer: Layer, tile_stats: bool) -> Result<()> {
    let scene = Checkpoint::load(checkpoint)?.scene;
    let manifest = views.manifest()?;
    let cameras = views.cameras(manifest.as_ref())?;
    let frames = views.frames(&scene)?;
    let settings = RasterSettings::default();
    let stats = jobs(&cameras, &frames)
        .par_iter()
        .map(|&(c, t)| {
            let cam = &cameras[c];
            let (image, stats) = if layer == Layer::Full {
                let o = render_frame(&scene, cam, t, &settings, false)?.output;
                (o.image, Some(o.stats))
            } else {
                (draw(&scene, cam, t, layer, &settings)?, None)
            };
            image.save_png(&image_path(out, cam.id, t))?;
            Ok((cam.id, t, stats))
        })
        .collect::<keysplat::Result<Vec<_>>>()?;
    if tile_stats {
        let mut text = String::new();
        for (camera, frame, s) in &stats {
            let Some(s) = s else { continue };
            for (i, n) in s.splats_per_tile.iter().enumerate() {
                let rec = serde_json::json!({
                    "camera": camera,
                    "frame": frame,
                    "tile_x": i % s.tiles_x.max(1),
                    "tile_y": i / s.tiles_x.max(1),
                    "splats": n,
                    "forward_micros": s.forward_micros,
                });
                text.push_str(&rec.to_string());
                text.push('\n');
            }
        }
        let p = out.join("tiles.jsonl");
        std::fs::create_dir_all(out)?;
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{}", serde_json::json!({ "out": out, "images": stats.len() }));
    Ok(())
}

pub fn separate(checkpoint: &Path, out: &Path, views: &ViewArgs) -> Result<()> {
    let scene = Checkpoint::load(checkpoint)?.scene;
    let manifest = views.manifest()?;
    let cameras = views.cameras(manifest.as_ref())?;
    let frames = views.frames(&scene)?;
    let settings = RasterSettings::default();
    let work = jobs(&cameras, &frames);
    work.par_iter().try_for_each(|&(c, t)| -> keysplat::Result<()> {
        let cam = &cameras[c];
        for (layer, dir) in [(Layer::Full, "full"), (Layer::Static, "static"), (Layer::Dynamic, "dynamic")] {
            draw(&scene, cam, t, layer, &settings)?.save_png(&image_path(&out.join(dir), cam.id, t))?;
        }
        Ok(())
    })?;

    let mut report = serde_json::json!({
        "out": out,
        "images": work.len(),
        "static": scene.statics.len(),
        "dynamic": scene.dynamics.len(),
    });
    if let Some(m) = &manifest {
        if let (Some(labels), Some(generator)) = (&m.labels, &m.generator) {
            let labels = load_labels(&m.root.join(labels))?;
            let generator = Checkpoint::load(&m.root.join(generator))?.scene;
            let visible = label_agreement(&scene, &generator, &labels.gaussians, FAINT_OPACITY);
            let all = label_agreement(&scene, &generator, &labels.gaussians, 0.0);
            report["labels"] = serde_json::json!({
                "faint_opacity": FAINT_OPACITY,
                "moving_recall": visible.moving_recall(),
                "moving_recall_all": all.moving_recall(),
                "agreement": visible,
                "agreement_all": all,
            });
        }
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
