use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod flags;
mod train;
mod view;

use flags::TrainFlags;

/// Keyframed 4D Gaussian splatting on the CPU.
#[derive(Parser, Debug)]
#[command(name = "keysplat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-view video dataset with ground-truth labels
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the fast-motion variant of the default scene
        #[arg(long)]
        fast_motion: bool,
        /// Scene description as JSON; replaces the built-in scene
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Train a scene on a dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory for logs, reports and checkpoints
        #[arg(long)]
        out: PathBuf,
        /// Training configuration as JSON; flags override it
        #[arg(long)]
        config: Option<PathBuf>,
        /// Schedule scaled down to a few thousand iterations
        #[arg(long)]
        short_run: bool,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Render frames of a checkpoint
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        views: view::ViewArgs,
        #[arg(long, value_enum, default_value_t = view::Layer::Full)]
        population: view::Layer,
        /// Also write per-tile splat counts to tiles.jsonl
        #[arg(long)]
        tile_stats: bool,
    },
    /// PSNR and SSIM of a checkpoint against dataset images
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::HeldOut)]
        split: Split,
        /// Also write the report to this file
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render static and dynamic Gaussians separately
    Separate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        views: view::ViewArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    HeldOut,
    Train,
    All,
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("EX4DGS_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().with_context(|| format!("EX4DGS_THREADS={v:?} is not a count"))?;
    if n == 0 {
        bail!("EX4DGS_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn gen_synth(out: PathBuf, seed: Option<u64>, fast_motion: bool, spec: Option<PathBuf>, frames: Option<usize>) -> Result<()> {
    let mut s = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None if fast_motion => keysplat::io::SyntheticSceneSpec::fast_motion(),
        None => keysplat::io::SyntheticSceneSpec::default(),
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(f) = frames {
        s.frames = f;
    }
    let m = keysplat::io::gen_synthetic(&s, &out)?;
    println!(
        "{}",
        serde_json::json!({ "dataset": out, "cameras": m.cameras.len(), "frames": m.frames, "held_out": m.held_out })
    );
    Ok(())
}

fn eval(checkpoint: PathBuf, data: PathBuf, split: Split, out: Option<PathBuf>) -> Result<()> {
    let ckpt = keysplat::io::Checkpoint::load(&checkpoint)?;
    let manifest = keysplat::io::DatasetManifest::load(&data)?;
    let cameras = match split {
        Split::HeldOut => manifest.held_out_cameras(),
        Split::Train => manifest.training_cameras(),
        Split::All => manifest.cameras.clone(),
    };
    if cameras.is_empty() {
        bail!("the dataset has no {split:?} cameras");
    }
    if ckpt.scene.total_frames != manifest.frames {
        bail!("checkpoint covers {} frames, dataset has {}", ckpt.scene.total_frames, manifest.frames);
    }
    let truth = manifest.load_images(&cameras)?;
    let e = keysplat::metrics::evaluate(&ckpt.scene, &cameras, &truth, true)?;
    let report = serde_json::json!({
        "checkpoint": checkpoint,
        "iteration": ckpt.iteration,
        "split": format!("{split:?}").to_lowercase(),
        "views": e.views,
        "psnr": e.psnr,
        "ssim1": e.ssim1,
        "ssim2": e.ssim2,
        "lpips": "n/a",
    });
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(p) = out {
        std::fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::GenSynth { out, seed, fast_motion, spec, frames } => gen_synth(out, seed, fast_motion, spec, frames),
        Command::Train { data, out, config, short_run, flags } => train::run(&data, &out, config, short_run, &flags),
        Command::Render { checkpoint, out, views, population, tile_stats } => {
            view::render(&checkpoint, &out, &views, population, tile_stats)
        }
        Command::Eval { checkpoint, data, split, out } => eval(checkpoint, data, split, out),
        Command::Separate { checkpoint, out, views } => view::separate(&checkpoint, &out, &views),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
