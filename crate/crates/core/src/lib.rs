//! Explicit keyframed 4D Gaussian splatting on the CPU.
//!
//! Scenes hold two populations: static Gaussians that may drift linearly over
//! normalized time, and dynamic Gaussians whose positions and rotations are
//! stored at sparse keyframes and interpolated in between. The crate covers
//! the representation ([`gauss`]), temporal interpolation ([`interp`]), a
//! differentiable tile rasterizer ([`render`]), lifecycle operations that
//! move Gaussians between populations ([`dynamics`]), a progressive trainer
//! ([`train`]) and dataset/checkpoint IO ([`io`]).

pub mod dynamics;
pub mod error;
pub mod gauss;
pub mod img;
pub mod interp;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod quat;
pub mod render;
pub mod sh;
pub mod train;

pub use error::{Error, Result};
pub use gauss::{
    Camera, CameraView, DynamicGaussian, GaussianCommon, KeyframeTrack, Population, SceneModel, SourceId,
    StaticGaussian, TemporalOpacity,
};
pub use img::Image;
pub use quat::{Quat, Vec3};
