//! Multi-view video datasets on disk.
//!
//! ```text
//! root/
//!   manifest.json          cameras, frame count, held-out ids, file names
//!   points3d.ply           first-frame point cloud
//!   cam_{c}/frame_{t}.png  one 8-bit RGB image per camera and frame
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ply::{load_pointcloud, PointCloud};
use crate::error::{Error, Result};
use crate::gauss::Camera;
use crate::img::Image;
use crate::train::TrainingSet;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub version: u32,
    pub frames: usize,
    pub cameras: Vec<Camera>,
    /// Camera ids reserved for evaluation.
    #[serde(default)]
    pub held_out: Vec<usize>,
    /// Point cloud file, relative to the root.
    pub pointcloud: String,
    /// Ground-truth label file of synthetic scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    /// Generator checkpoint of synthetic scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
}

pub fn image_path(root: &Path, camera_id: usize, frame: usize) -> PathBuf {
    root.join(format!("cam_{camera_id}")).join(format!("frame_{frame}.png"))
}

impl DatasetManifest {
    /// Reads and fully validates a dataset, failing on the first missing image.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.root = root.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", self.version)));
        }
        if self.frames == 0 || self.cameras.is_empty() {
            return Err(Error::Config("dataset has no frames or no cameras".into()));
        }
        for c in &self.cameras {
            c.validate().map_err(Error::Config)?;
        }
        for id in &self.held_out {
            if !self.cameras.iter().any(|c| c.id == *id) {
                return Err(Error::Config(format!("held-out camera {id} is not in the manifest")));
            }
        }
        if self.training_cameras().is_empty() {
            return Err(Error::Config("every camera is held out".into()));
        }
        let pc = self.root.join(&self.pointcloud);
        if !pc.is_file() {
            return Err(Error::MissingImage(pc));
        }
        for c in &self.cameras {
            for t in 0..self.frames {
                let p = self.image_path(c.id, t);
                if !p.is_file() {
                    return Err(Error::MissingImage(p));
                }
            }
        }
        Ok(())
    }

    pub fn image_path(&self, camera_id: usize, frame: usize) -> PathBuf {
        image_path(&self.root, camera_id, frame)
    }

    pub fn camera(&self, id: usize) -> Option<&Camera> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn training_cameras(&self) -> Vec<Camera> {
        self.cameras.iter().filter(|c| !self.held_out.contains(&c.id)).cloned().collect()
    }

    pub fn held_out_cameras(&self) -> Vec<Camera> {
        self.cameras.iter().filter(|c| self.held_out.contains(&c.id)).cloned().collect()
    }

    /// All frames of `cameras`, camera-major. Decoding runs in parallel.
    pub fn load_images(&self, cameras: &[Camera]) -> Result<Vec<Image>> {
        let jobs: Vec<(usize, usize)> =
            cameras.iter().flat_map(|c| (0..self.frames).map(move |t| (c.id, t))).collect();
        jobs.par_iter().map(|&(c, t)| Image::load_png(&self.image_path(c, t))).collect()
    }

    pub fn training_set(&self) -> Result<TrainingSet> {
        let cams = self.training_cameras();
        let images = self.load_images(&cams)?;
        TrainingSet::new(cams, self.frames, images)
    }

    pub fn pointcloud(&self) -> Result<PointCloud> {
        load_pointcloud(&self.root.join(&self.pointcloud))
    }
}
