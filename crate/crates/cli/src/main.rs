//! `clickmil`: scripted, reproducible runs of the center-click pipeline.
//!
//! Exit codes: 0 success, 1 configuration or data error, 2 usage error.
//! `CLICKMIL_THREADS` caps the worker threads.

mod commands;
mod provenance;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const THREADS_ENV: &str = "CLICKMIL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "clickmil", version, about = "Center-click supervision for weakly supervised localization")]
struct Cli {
    /// TOML file with one table per subcommand, e.g. `[train]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate qualification polygons clicked by replica annotators.
    GenPolygons(GenPolygons),
    /// Fit the annotator error model from clicks on polygons.
    FitErrorModel(FitErrorModel),
    /// Generate the seeded synthetic benchmark dataset.
    GenSynthetic(GenSynthetic),
    /// Simulate noisy center clicks on every training object.
    SimulateClicks(SimulateClicks),
    /// Run multi-fold MIL for every class.
    Train(Train),
    /// CorLoc, mAP and annotation time of a training run.
    Evaluate(Evaluate),
    /// Start the annotation service.
    Serve(Serve),
    /// Tabulate metrics against annotation time.
    Report(Report),
}

#[derive(Debug, Args)]
pub struct GenPolygons {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub clicks_per_polygon: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitErrorModel {
    /// Directory holding polygons.jsonl and clicks.jsonl.
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mu_degree: Option<usize>,
    #[arg(long)]
    pub sim_law_degree: Option<usize>,
    /// Pixels, or `percentile` to fit it from the error distribution.
    #[arg(long)]
    pub d_max: Option<String>,
}

#[derive(Debug, Args)]
pub struct GenSynthetic {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub positive_images: Option<usize>,
    #[arg(long)]
    pub negative_images: Option<usize>,
    #[arg(long)]
    pub test_images: Option<usize>,
    #[arg(long)]
    pub proposals: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub iou_floor: Option<f64>,
    /// Distractor appearance overlap in [0, 1].
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub objectness_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateClicks {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// error_model.json; the replica model is used when absent.
    #[arg(long)]
    pub error_model: Option<PathBuf>,
    /// Clicks per object, each from a different simulated annotator.
    #[arg(long)]
    pub clicks: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// clicks.jsonl, or a directory containing it.
    #[arg(long)]
    pub clicks: Option<PathBuf>,
    #[arg(long)]
    pub error_model: Option<PathBuf>,
    /// none, one-click or two-click.
    #[arg(long)]
    pub supervision: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub deep_mil_iterations: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub negatives_per_image: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Evaluate {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory of `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// eleven-point or all-point.
    #[arg(long)]
    pub ap_mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Serve {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Where clicks and qualification data are persisted.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub clicks_per_object: Option<usize>,
    #[arg(long)]
    pub golden_per_class: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Report {
    /// metrics.json files, or directories containing one.
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("invalid {THREADS_ENV} `{raw}`: expected a positive integer"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let result = init_threads().and_then(|()| match cli.command {
        Command::GenPolygons(a) => commands::gen_polygons(a, cfg),
        Command::FitErrorModel(a) => commands::fit_error_model(a, cfg),
        Command::GenSynthetic(a) => commands::gen_synthetic(a, cfg),
        Command::SimulateClicks(a) => commands::simulate_clicks(a, cfg),
        Command::Train(a) => commands::train(a, cfg),
        Command::Evaluate(a) => commands::evaluate(a, cfg),
        Command::Serve(a) => commands::serve(a, cfg),
        Command::Report(a) => commands::report(a, cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<settings::UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("see `clickmil --help`");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
