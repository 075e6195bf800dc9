//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use satfusion_core::metrics::MetricRow;
use satfusion_core::train::{self, TrainConfig, Variant};
use satfusion_core::wald::{self, BaseScene, SceneSet, SetConfig, Split};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{at, IoError, Result};
use crate::export;
use crate::redundancy::{break_even_t, redundancy};
use crate::report::{write_report, Tabular};
use crate::scene_io::{load_bases, load_scene, load_set, read_json, save_set, write_json};
use crate::sfim;
use crate::synth::synthesize_set_parallel;

#[derive(Debug, Parser)]
#[command(name = "satfusion", version, about = "Multi-frame super-resolution and pan-sharpening fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct DataArgs {
    /// `procedural` or a directory of `<id>/{gt,pan}.sfim` source scenes.
    #[arg(long, default_value = "procedural")]
    pub source: String,
    /// Number of procedural scenes.
    #[arg(long, default_value_t = 8)]
    pub scenes: usize,
    /// Side length of procedural scenes.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Bands of procedural scenes.
    #[arg(long, default_value_t = 3)]
    pub bands: usize,
    #[arg(long, default_value_t = 0.15)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test_fraction: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a scene set from clean sources.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gamma: usize,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        seed: u64,
        /// Override the maximum frame shift implied by epsilon.
        #[arg(long)]
        shift_max: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train a model and write its best checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a scene set.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to test, else val, else train.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
    },
    /// Fuse one scene directory.
    Fuse {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: Option<PathBuf>,
        /// Pixmap of the per-pixel error against the scene's ground truth.
        #[arg(long)]
        error_map: Option<PathBuf>,
    },
    /// Quality metrics between two tensor files.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1)]
        gamma: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Input vs output storage cells.
    Redundancy {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        w: u64,
        #[arg(long)]
        gamma: u64,
        #[arg(long)]
        cms: u64,
    },
    /// Retrain and evaluate for each perturbation intensity.
    SweepEpsilon {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Retrain with loss terms or the composition adjustment switched off.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants; `+` combines toggles, e.g. `no-ssim+no-sam,no-adjust`.
        #[arg(long, value_delimiter = ',', required = true)]
        toggles: Vec<String>,
        /// Existing scene set; synthesized at this `--epsilon` otherwise.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split {s:?}")),
    }
}

fn bases(args: &DataArgs, seed: u64) -> Result<Vec<BaseScene>> {
    if args.source == "procedural" {
        Ok(wald::procedural_bases(args.scenes, seed, args.size, args.size, args.bands)?)
    } else {
        load_bases(Path::new(&args.source))
    }
}

fn set_config(args: &DataArgs, gamma: usize, frames: usize, epsilon: f64, seed: u64) -> SetConfig {
    SetConfig { val_fraction: args.val_fraction, test_fraction: args.test_fraction, ..SetConfig::new(gamma, frames, epsilon, seed) }
}

fn emit<R: Serialize + Tabular>(report: &R, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_report(p, report),
        None => {
            let text = serde_json::to_string_pretty(report).map_err(|e| IoError::json(Path::new("<stdout>"), e))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let cfg: TrainConfig = read_json(path)?;
    cfg.validate().map_err(at(path))?;
    Ok(cfg)
}

/// Trains with the model geometry taken from the data, writing checkpoint and history to `out`.
pub fn train_to_dir(cfg: &TrainConfig, data: &SceneSet, out: &Path) -> Result<train::TrainRun> {
    let cfg = TrainConfig { fusion: train::fit_geometry(&cfg.fusion, data)?, ..cfg.clone() };
    let run = train::train(&cfg, data)?;
    let info = serde_json::json!({ "train": cfg, "best": run.history.best });
    save_checkpoint(&run.best, out, info)?;
    write_json(&out.join("history.json"), &run.history)?;
    Ok(run)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, gamma, frames, epsilon, seed, shift_max, data } => {
            let src = bases(&data, seed)?;
            let cfg = SetConfig { shift_max, ..set_config(&data, gamma, frames, epsilon, seed) };
            let set = synthesize_set_parallel(&src, &cfg)?;
            save_set(&set, &out)?;
            log::info!("wrote {} scenes to {}", set.len(), out.display());
        }
        Command::Train { data, config, out } => {
            let cfg = load_config(&config)?;
            let set = load_set(&data)?;
            let run = train_to_dir(&cfg, &set, &out)?;
            log::info!("best epoch {} (loss {})", run.history.best.epoch, run.history.best.loss);
        }
        Command::Eval { data, ckpt, report, split } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let set = load_set(&data)?;
            let split = split.unwrap_or_else(|| train::report_split(&set));
            write_report(&report, &train::evaluate(&model, &set, split)?)?;
        }
        Command::Fuse { scene, ckpt, out, png, error_map } => {
            let (model, _) = load_checkpoint(&ckpt)?;
            let (scene, _) = load_scene(&scene)?;
            let sr = satfusion_core::model::Fuser::fuse_scene(&model, &scene.lrms, &scene.pan)?;
            sfim::write_tensor(&sr, &out)?;
            if let Some(p) = png {
                export::export_png(&sr, &p)?;
            }
            if let Some(p) = error_map {
                export::export_error_map(&sr, &scene.gt, &p)?;
            }
        }
        Command::Metrics { a, b, gamma, report } => {
            let (ta, tb) = (sfim::read_tensor(&a)?, sfim::read_tensor(&b)?);
            let row = MetricRow::compute(a.display().to_string(), &ta, &tb, gamma)?;
            emit(&row, report.as_deref())?;
        }
        Command::Redundancy { n, t, h, w, gamma, cms } => {
            let r = redundancy(n, t, h, w, gamma, cms)?;
            let out = serde_json::json!({
                "d_input": r.d_input,
                "d_output": r.d_output,
                "difference": r.difference,
                "break_even_t": break_even_t(n, h, w, gamma, cms)?,
            });
            println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
        }
        Command::SweepEpsilon { config, epsilons, report, data } => {
            let cfg = load_config(&config)?;
            let src = bases(&data, cfg.seed)?;
            let set = set_config(&data, cfg.fusion.gamma, cfg.fusion.frames, 0.0, cfg.seed);
            emit(&train::epsilon_sweep(&cfg, &src, &set, &epsilons)?, report.as_deref())?;
        }
        Command::Ablate { config, toggles, data_dir, epsilon, report, data } => {
            let cfg = load_config(&config)?;
            let variants = toggles.iter().map(|t| Variant::parse(t)).collect::<satfusion_core::Result<Vec<_>>>()?;
            let set = match data_dir {
                Some(d) => load_set(&d)?,
                None => {
                    let src = bases(&data, cfg.seed)?;
                    wald::synthesize_set(&src, &set_config(&data, cfg.fusion.gamma, cfg.fusion.frames, epsilon, cfg.seed))?
                }
            };
            let cfg = TrainConfig { fusion: train::fit_geometry(&cfg.fusion, &set)?, ..cfg };
            emit(&train::run_ablation(&cfg, &set, &variants)?, report.as_deref())?;
        }
    }
    Ok(())
}
