//! `footprint` — prepare data, train, evaluate, compare, and render overlays.
//!
//! Settings live in a TOML file with dotted keys (`train.learning_rate`,
//! `data.window`, ...); `--set key=value` overrides the file, and dedicated
//! flags are shorthands for the same keys.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use footprint_core::config::RunConfig;
use footprint_core::data::io::{load_patches, read_manifest, read_scene, read_scenes, write_manifest, write_scene};
use footprint_core::data::{split_dataset, tile_scenes, PatchSample};
use footprint_core::harness::{self, ExperimentSpec};
use footprint_core::metrics::{write_metrics_csv, METRICS_HEADER_COMMENT};
use footprint_core::synth::{generate_scene, SyntheticSceneSpec};
use footprint_core::trainer::{write_rows, Trainer};
use footprint_core::{checkpoint, Error};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "footprint", version, about = "Building-footprint segmentation with conditional GANs")]
struct Cli {
    /// TOML config file (dotted keys or tables).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Directory that relative output paths resolve against.
    #[arg(long, env = "FOOTPRINT_OUTPUT_ROOT", default_value = "runs", global = true)]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes (image, mask, polygons).
    Synth {
        /// Number of scenes.
        #[arg(long, default_value_t = 200)]
        n_scenes: usize,
        /// Shorthand for `synth.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory, relative to the output root.
        #[arg(long, default_value = "scenes")]
        out: PathBuf,
    },
    /// Tile scenes and write the train/val manifest.
    Prepare {
        #[arg(long)]
        scenes: PathBuf,
        /// Shorthand for `data.window`.
        #[arg(long)]
        window: Option<usize>,
        /// Shorthand for `data.stride`.
        #[arg(long)]
        stride: Option<usize>,
        /// Shorthand for `data.train_fraction`.
        #[arg(long)]
        train_fraction: Option<f64>,
        /// Shorthand for `data.split_seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "manifest.csv")]
        out: PathBuf,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Continue from a checkpoint (its config wins over the file).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        out: PathBuf,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `train` or `val`.
        #[arg(long, default_value = "val")]
        split: String,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Train and score every cell of the experiment grid.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
    /// Predict a whole scene and render the footprints in red over it.
    InferOverlay {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        scene_id: String,
        /// Stride between tiles; defaults to `data.stride`.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, default_value = "overlay.png")]
        out: PathBuf,
    },
    /// Time generator inference per patch.
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        patches: usize,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory of scenes the manifest refers to.
    #[arg(long)]
    scenes: PathBuf,
    /// Manifest written by `prepare`.
    #[arg(long)]
    manifest: PathBuf,
}

impl DataArgs {
    fn load(&self) -> footprint_core::Result<(Vec<PatchSample>, Vec<PatchSample>)> {
        let (train, val) = read_manifest(&self.manifest)?;
        Ok((load_patches(&self.scenes, &train)?, load_patches(&self.scenes, &val)?))
    }
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn load_config(cli: &Cli) -> footprint_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(cli.overrides.iter().map(String::as_str))?;
    Ok(cfg)
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> footprint_core::Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

/// The generator and critic are built for the tiling window.
fn train_config(cfg: &RunConfig) -> footprint_core::Result<footprint_core::trainer::TrainConfig> {
    let t = cfg.train.clone().with_patch_size(cfg.data.window);
    t.validate()?;
    Ok(t)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli)?;
    let root = &cli.output_root;
    match &cli.command {
        Command::Synth { n_scenes, seed, out } => {
            set_opt(&mut cfg, "synth.seed", seed)?;
            cfg.synth.validate()?;
            let dir = resolve(root, out);
            write_synthetic(&cfg.synth, *n_scenes, &dir)?;
            println!("wrote {n_scenes} scenes to {}", dir.display());
        }
        Command::Prepare {
            scenes,
            window,
            stride,
            train_fraction,
            seed,
            out,
        } => {
            set_opt(&mut cfg, "data.window", window)?;
            set_opt(&mut cfg, "data.stride", stride)?;
            set_opt(&mut cfg, "data.train_fraction", train_fraction)?;
            set_opt(&mut cfg, "data.split_seed", seed)?;
            let tiling = cfg.data.tiling()?;
            let all = read_scenes(scenes)?;
            if all.is_empty() {
                return Err(Error::EmptyDataset(format!("no scenes in {}", scenes.display())).into());
            }
            let (patches, skipped) = tile_scenes(&all, tiling)?;
            let origins: Vec<_> = patches.into_iter().map(|p| p.origin).collect();
            let (train, val) = split_dataset(&origins, cfg.data.train_fraction, cfg.data.split_seed, tiling)?;
            let path = resolve(root, out);
            write_manifest(&path, &[&train, &val])?;
            println!(
                "{} patches from {} scenes ({} skipped as too small): train {}, val {} -> {}",
                origins.len(),
                all.len() - skipped.len(),
                skipped.len(),
                train.len(),
                val.len(),
                path.display()
            );
        }
        Command::Train { data, resume, out } => {
            let (train, val) = data.load()?;
            let mut trainer = match resume {
                Some(path) => checkpoint::load::<f32>(path)?,
                None => Trainer::<f32>::new(train_config(&cfg)?)?,
            };
            let dir = resolve(root, out);
            let summary = trainer.train(&train, &val, Some(&dir))?;
            match summary.final_report {
                Some(r) => println!(
                    "trained {} epochs: OA {:.2}% P {:.4} R {:.4} F1 {:.4} IoU {:.4}",
                    trainer.state.epoch,
                    100.0 * r.overall_accuracy,
                    r.precision,
                    r.recall,
                    r.f1,
                    r.iou
                ),
                None => println!("trained {} epochs (no validation patches)", trainer.state.epoch),
            }
            if let Some(last) = summary.checkpoints.last() {
                println!("checkpoint: {}", last.display());
            }
        }
        Command::Evaluate {
            data,
            checkpoint: ckpt,
            split,
            out,
        } => {
            let (train, val) = data.load()?;
            let patches = match split.as_str() {
                "train" => train,
                "val" => val,
                other => bail!(Error::Config(format!("split must be 'train' or 'val', got '{other}'"))),
            };
            let trainer = checkpoint::load::<f32>(ckpt)?;
            let (row, r) = harness::evaluation_row(&trainer, &patches)?;
            let path = resolve(root, out);
            write_metrics_csv(&path, &[METRICS_HEADER_COMMENT], &[row])?;
            println!(
                "{} on {split} ({} patches): OA {:.2}% P {:.4} R {:.4} F1 {:.4} IoU {:.4}{}",
                trainer.cfg.method(),
                patches.len(),
                100.0 * r.overall_accuracy,
                r.precision,
                r.recall,
                r.f1,
                r.iou,
                if r.degenerate { " (degenerate ratios set to 0)" } else { "" }
            );
        }
        Command::Compare { data, out } => {
            let (train, val) = data.load()?;
            let spec = ExperimentSpec::from_config(&cfg.experiment, train_config(&cfg)?, resolve(root, out))?;
            let outcomes = harness::run_comparison(&spec, &train, &val)?;
            for o in &outcomes {
                match o.iou() {
                    Some(iou) => println!("{:<28} IoU {iou:.4}", o.cell.name()),
                    None => println!("{:<28} DIVERGED", o.cell.name()),
                }
            }
            println!("table: {}", spec.output_dir.join(harness::COMPARISON_CSV).display());
        }
        Command::InferOverlay {
            checkpoint: ckpt,
            scenes,
            scene_id,
            stride,
            out,
        } => {
            let trainer = checkpoint::load::<f32>(ckpt)?;
            let window = trainer.cfg.patch_size();
            let tiling = footprint_core::data::Tiling::new(window, stride.unwrap_or(cfg.data.stride))?;
            let scene = read_scene(scenes, scene_id)?;
            let path = resolve(root, out);
            let mask = harness::infer_overlay(&trainer.gen, &scene, tiling, &path)?;
            let fg = mask.iter().filter(|&&m| m != 0).count();
            println!("{fg} footprint pixels of {} -> {}", mask.len(), path.display());
        }
        Command::Bench {
            data,
            checkpoint: ckpt,
            patches,
            out,
        } => {
            let (train, val) = data.load()?;
            let pool = if val.is_empty() { train } else { val };
            let trainer = checkpoint::load::<f32>(ckpt)?;
            let timed = &pool[..pool.len().min((*patches).max(1))];
            let t = harness::bench_inference(&trainer, timed)?;
            let path = resolve(root, out);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_rows(&path, &[t])?;
            println!(
                "{}: {:.3} ± {:.3} ms per patch over {} patches",
                trainer.cfg.method(),
                t.mean_ms,
                t.std_ms,
                t.samples
            );
        }
    }
    Ok(())
}

fn write_synthetic(spec: &SyntheticSceneSpec, n: usize, dir: &Path) -> footprint_core::Result<()> {
    for i in 0..n {
        let (scene, polygons) = generate_scene(spec, i)?;
        write_scene(dir, &scene)?;
        std::fs::write(
            footprint_core::data::io::polygon_path(dir, scene.scene_id()),
            footprint_core::data::io::format_polygons(&polygons),
        )?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_config() => EXIT_CONFIG,
        Some(Error::Diverged { .. }) => EXIT_DIVERGED,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli).with_context(|| format!("footprint {}", command_name(&cli.command))) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Prepare { .. } => "prepare",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Compare { .. } => "compare",
        Command::InferOverlay { .. } => "infer-overlay",
        Command::Bench { .. } => "bench",
    }
}
