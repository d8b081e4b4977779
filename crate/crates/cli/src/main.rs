//! Command-line front end: fixture generation, training, evaluation,
//! projection rendering, tiled inference and standalone metrics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use penseg::harness::{evaluate, infer_large, Model, SynthConfig, TrainConfig};
use penseg::io::{load_annotations, load_stack, save_annotations, save_detections, save_png, save_stack};
use penseg::metrics::{compute_metrics, iou_matrix, match_detections};
use penseg::projections::{linear_depth_embed, mip, DepthEmbedConfig};
use penseg::synthgen::gen_cell_scene;
use penseg::{AnnotationSet, ImageStack};

const STACK_SUFFIX: &str = ".ome.tif";

#[derive(Parser)]
#[command(name = "penseg", version, about = "Learned z-stack projection and multi-channel cell segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FixedMode {
    Mip,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic OME-TIFF stacks with annotation JSON.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes parameters, config and history.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Validation data; defaults to the training data.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pooled detection metrics of a model over a data directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a projection as PNG.
    Project {
        #[arg(long, conflicts_with = "mode", required_unless_present = "mode")]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<FixedMode>,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sliding-window detection on a large stack.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[arg(long, default_value_t = 512)]
        tile: usize,
        #[arg(long, default_value_t = 64)]
        overlap: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two annotation files.
    Metrics {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { config, out } => synth(&config, &out),
        Command::Train { config, data, val, out } => train(&config, &data, val.as_deref(), &out),
        Command::Eval { model, data, iou, out } => eval(&model, &data, iou, out.as_deref()),
        Command::Project { model, mode, stack, out } => project(model.as_deref(), mode, &stack, &out),
        Command::Infer { model, stack, tile, overlap, out } => infer(&model, &stack, tile, overlap, &out),
        Command::Metrics { gt, pred, iou } => metrics(&gt, &pred, iou),
    }
}

fn synth(config: &Path, out: &Path) -> Result<()> {
    let cfg = SynthConfig::load(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..cfg.n_scenes {
        let (stack, ann) = gen_cell_scene(&cfg.scene(i))?;
        let stem = out.join(format!("scene_{i:03}"));
        save_stack(&stack, stem.with_extension("ome.tif"))?;
        save_annotations(&ann, stem.with_extension("json"))?;
        log::info!("wrote {} ({} cells)", stem.display(), ann.len());
    }
    Ok(())
}

/// Every `<name>.ome.tif` in `dir` paired with `<name>.json`, sorted by name.
fn load_dataset(dir: &Path) -> Result<Vec<(ImageStack, AnnotationSet)>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix(STACK_SUFFIX)).map(String::from))
        .collect();
    stems.sort();
    if stems.is_empty() {
        bail!("no *{STACK_SUFFIX} stacks in {}", dir.display());
    }
    stems
        .iter()
        .map(|s| {
            let stack = load_stack(dir.join(format!("{s}{STACK_SUFFIX}")))?;
            let ann = load_annotations(dir.join(format!("{s}.json")), Some(stack.dims()))?;
            Ok((stack, ann))
        })
        .collect()
}

fn train(config: &Path, data: &Path, val: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = TrainConfig::load(config)?;
    let dataset = load_dataset(data)?;
    let val_set = match val {
        Some(v) => load_dataset(v)?,
        None => dataset.clone(),
    };
    let (model, history) = penseg::harness::train(&cfg, &dataset, &val_set)?;
    model.save(out)?;
    let path = out.join("history.json");
    fs::write(&path, history.to_json()).with_context(|| format!("writing {}", path.display()))?;
    log::info!("best epoch {} of {}", history.best_epoch, history.val_losses.len());
    Ok(())
}

fn eval(model: &Path, data: &Path, iou: f64, out: Option<&Path>) -> Result<()> {
    let model = Model::load(model)?;
    let report = evaluate(&model, &load_dataset(data)?, iou)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn project(model: Option<&Path>, mode: Option<FixedMode>, stack: &Path, out: &Path) -> Result<()> {
    let stack = load_stack(stack)?;
    let rgb = match (model, mode) {
        (Some(dir), _) => Model::load(dir)?.project(&stack)?,
        (None, Some(FixedMode::Mip)) => mip(&stack),
        (None, Some(FixedMode::Linear)) => linear_depth_embed(&stack, &DepthEmbedConfig::default())?,
        (None, None) => bail!("either --model or --mode is required"),
    };
    save_png(&rgb, out)?;
    Ok(())
}

fn infer(model: &Path, stack: &Path, tile: usize, overlap: usize, out: &Path) -> Result<()> {
    let model = Model::load(model)?;
    let stack = load_stack(stack)?;
    let detections = infer_large(&model, &stack, tile, overlap)?;
    save_detections(&detections, stack.depth(), out)?;
    log::info!("{} detections", detections.len());
    Ok(())
}

fn metrics(gt: &Path, pred: &Path, iou: f64) -> Result<()> {
    let g = load_annotations(gt, None)?;
    let p = load_annotations(pred, None)?;
    if (g.dims.1, g.dims.2) != (p.dims.1, p.dims.2) {
        bail!("ground truth is {}x{}, predictions are {}x{}", g.dims.1, g.dims.2, p.dims.1, p.dims.2);
    }
    let gm: Vec<_> = g.cells.iter().map(|c| &c.mask).collect();
    let pm: Vec<_> = p.cells.iter().map(|c| &c.mask).collect();
    let report = compute_metrics(&match_detections(&iou_matrix(&gm, &pm)?, iou));
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
