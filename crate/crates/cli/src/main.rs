//! `symspot` command-line front end.

mod commands;
mod inputs;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use symspot::config::RunConfig;

#[derive(Parser)]
#[command(name = "symspot", version, about = "Keypoint-based symbol spotting for CAD rasters")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `paths.output_dir` and SYMSPOT_OUTPUT_DIR.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the thread count and SYMSPOT_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an annotated synthetic dataset split.
    Synth(SynthArgs),
    /// Train a predictor on `<data_dir>/train` (validating on `<data_dir>/val`).
    Train(TrainArgs),
    /// Detect keypoints in images and write a detections CSV.
    Detect(DetectArgs),
    /// Group detections into rectangle symbols and write a symbols JSON.
    Group(GroupArgs),
    /// Score predictions against ground truth and write a metrics CSV.
    Eval(EvalArgs),
    /// Overlay detections or symbols on an image as SVG.
    Render(RenderArgs),
    /// Train every schedule and offset arm and compare them.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value = "train", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Destination root; the split becomes a subdirectory. Defaults to `paths.data_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Replaces the configured schedule's variant, keeping its sigmas and epochs.
    #[arg(long, value_parser = ["pgk", "fixed", "naive_switch"])]
    pub schedule: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Checkpoint to write. Defaults to `paths.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Output CSV. Defaults to `<output_dir>/detections.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-patch heatmaps as PGM files here.
    #[arg(long)]
    pub heatmap_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct GroupArgs {
    /// Detections CSV.
    pub detections: PathBuf,
    /// Annotation JSON files or directories supplying region boxes per image;
    /// images without one are grouped as a whole.
    #[arg(long)]
    pub regions: Vec<PathBuf>,
    /// Output JSON. Defaults to `<output_dir>/symbols.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Detections CSV, symbols JSON, annotation JSON or a directory of annotations.
    pub pred: PathBuf,
    /// Annotation JSON or a directory of them.
    pub gt: PathBuf,
    /// Output CSV. Defaults to `<output_dir>/metrics.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RenderArgs {
    pub image: PathBuf,
    #[arg(long, conflicts_with = "symbols")]
    pub detections: Option<PathBuf>,
    #[arg(long)]
    pub symbols: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Arms to run; all of them by default.
    #[arg(long, value_delimiter = ',')]
    pub arms: Vec<String>,
    /// Predictor seeds; the root seed alone by default.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(d) = &cli.output_dir {
        cfg.paths.output_dir = d.clone();
    }
    if let Some(n) = cli.threads {
        cfg.threads = Some(n);
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Detect(a) => commands::detect(&cfg, a),
        Command::Group(a) => commands::group(&cfg, a),
        Command::Eval(a) => commands::eval(&cfg, a),
        Command::Render(a) => render::run(a),
        Command::Ablate(a) => commands::ablate(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
