//! The `train` command. Training runs on the calling thread; a single
//! writer thread owns every output file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use anyhow::{anyhow, Context, Result};
use keysplat::io::{seed_statics, Checkpoint, DatasetManifest};
use keysplat::train::{self, CheckpointReason, MetricsRecord, Observer, TrainConfig, TrainState};
use keysplat::SceneModel;

use crate::flags::TrainFlags;

enum Msg {
    Record(MetricsRecord),
    Checkpoint(PathBuf, Vec<u8>),
}

struct Channel {
    tx: mpsc::Sender<Msg>,
    out: PathBuf,
}

impl Observer for Channel {
    fn record(&mut self, record: &MetricsRecord) {
        // A closed channel means the writer failed; its error surfaces on join.
        let _ = self.tx.send(Msg::Record(record.clone()));
    }

    fn checkpoint(&mut self, state: &TrainState, reason: CheckpointReason) -> keysplat::Result<()> {
        let name = match reason {
            CheckpointReason::Extension => format!("checkpoints/duration_{:04}.ckpt", state.scene.duration_frames),
            CheckpointReason::Final => "final.ckpt".to_string(),
        };
        let bytes = Checkpoint::from_state(state, true).to_bytes();
        let _ = self.tx.send(Msg::Checkpoint(self.out.join(name), bytes));
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn writer(out: &Path, rx: mpsc::Receiver<Msg>) -> Result<()> {
    let mut metrics = create(&out.join("metrics.jsonl"))?;
    let mut conversions = create(&out.join("conversions.jsonl"))?;
    let mut prunes = create(&out.join("prunes.jsonl"))?;
    for msg in rx {
        match msg {
            Msg::Record(r) => {
                writeln!(metrics, "{}", r.to_jsonl())?;
                for e in &r.events {
                    match e.get("event").and_then(|v| v.as_str()) {
                        Some("extract") => writeln!(conversions, "{e}")?,
                        Some("prune") => writeln!(prunes, "{e}")?,
                        _ => {}
                    }
                }
                eprintln!(
                    "iter {:>6}  frames {:>4}  loss {:.4}  psnr {:6.2}  static {:>6}  dynamic {:>6}",
                    r.iteration, r.duration, r.loss, r.psnr_train, r.n_static, r.n_dynamic
                );
            }
            Msg::Checkpoint(path, bytes) => {
                if let Some(dir) = path.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    for w in [&mut metrics, &mut conversions, &mut prunes] {
        w.flush()?;
    }
    Ok(())
}

pub fn config_for(manifest: &DatasetManifest, file: Option<PathBuf>, short_run: bool, flags: &TrainFlags) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    if short_run {
        let seed = cfg.seed;
        cfg = TrainConfig::short_run(
            flags.total_iterations.unwrap_or(6000),
            flags.keyframe_interval.unwrap_or(cfg.keyframe_interval),
            manifest.frames,
        );
        cfg.seed = seed;
    }
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(data: &Path, out: &Path, config: Option<PathBuf>, short_run: bool, flags: &TrainFlags) -> Result<()> {
    let manifest = DatasetManifest::load(data)?;
    let cfg = config_for(&manifest, config, short_run, flags)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;

    let set = manifest.training_set()?;
    let mut init = SceneModel::empty(cfg.initial_duration.min(manifest.frames), manifest.frames, cfg.keyframe_interval);
    init.statics = seed_statics(&manifest.pointcloud()?, cfg.sh_degree)?;

    let (tx, rx) = mpsc::channel();
    let dir = out.to_path_buf();
    let handle = thread::spawn(move || writer(&dir, rx));
    let mut observer = Channel { tx, out: out.to_path_buf() };
    let result = train::run(&cfg, &set, init, &mut observer);
    drop(observer);
    let written = handle.join().map_err(|_| anyhow!("writer thread panicked"))?;
    let output = result?;
    written?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": out.join("final.ckpt"),
            "iterations": output.state.iteration,
            "static": output.state.scene.statics.len(),
            "dynamic": output.state.scene.dynamics.len(),
        })
    );
    Ok(())
}
