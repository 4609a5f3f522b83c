use clap::Args;
use keysplat::train::TrainConfig;

macro_rules! train_flags {
    ($($(#[doc = $doc:literal])* $field:ident: $ty:ty,)*) => {
        /// Overrides for every [`TrainConfig`] field. Unset flags keep the
        /// value from `--config`, the preset or the defaults.
        #[derive(Args, Debug, Default, Clone)]
        pub struct TrainFlags {
            $(
                $(#[doc = $doc])*
                #[arg(long, help_heading = "Training configuration")]
                pub $field: Option<$ty>,
            )*
        }

        impl TrainFlags {
            pub fn apply(&self, cfg: &mut TrainConfig) {
                $(
                    if let Some(v) = &self.$field {
                        cfg.$field = v.clone();
                    }
                )*
            }
        }
    };
}

train_flags! {
    /// Frames between keyframes of dynamic Gaussians
    keyframe_interval: usize,
    /// Frames in the first training window
    initial_duration: usize,
    /// Iterations between window extensions
    extend_every: usize,
    /// Weight of the static displacement regularizer
    reg_static: f64,
    /// Weight of the dynamic motion regularizer
    reg_dynamic: f64,
    /// Percent of statics converted per extraction
    eta_percent: f64,
    /// Keyframes refit when the window grows
    rho: usize,
    /// Weight of the D-SSIM term
    ssim_weight: f64,
    /// Backtracking prune threshold as a multiple of the median error
    prune_kappa: f64,
    /// Absolute error floor for backtracking prunes
    prune_min_error: f64,
    /// RNG seed of the run
    seed: u64,
    total_iterations: usize,
    /// true or false
    enable_extraction: bool,
    extract_every: usize,
    backtrack_every: usize,
    backtrack_until: usize,
    sh_degree: usize,
    lr_position: f64,
    lr_position_final: f64,
    lr_opacity: f64,
    lr_scale: f64,
    lr_rotation: f64,
    lr_sh: f64,
    lr_temporal: f64,
    densify_from: usize,
    densify_until: usize,
    densify_every: usize,
    /// Mean screen-space gradient that triggers densification
    densify_grad_threshold: f64,
    /// Clone below this fraction of the scene extent, split above
    percent_dense: f64,
    /// Densification removes Gaussians less opaque than this
    min_opacity: f64,
    max_gaussians: usize,
    log_every: usize,
}
