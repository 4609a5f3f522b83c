//! Files: point clouds, checkpoints, datasets and synthetic scenes.

pub mod checkpoint;
pub mod dataset;
pub mod ply;
pub mod synth;

pub use checkpoint::{Checkpoint, Moments};
pub use dataset::{image_path, DatasetManifest};
pub use ply::{load_pointcloud, parse_ply, seed_statics, write_ply, PointCloud};
pub use synth::{build_generator, gen_synthetic, label_agreement, GeneratedScene, SyntheticSceneSpec};
