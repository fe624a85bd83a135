//! `delinkit`: file-based driver for segmentation, features, labeling,
//! training, prediction, suggestion, evaluation, resampling, robustness
//! experiments and the delineation service.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "delinkit", version, about = "Boundary delineation toolkit")]
pub struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// File of `key = value` lines supplying defaults for long flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// SLIC-segment an RGB raster into a line network.
    Segment(SegmentArgs),
    /// Normalize externally produced contour lines into a network.
    Network(NetworkArgs),
    /// Compute the per-line feature table.
    Features(FeaturesArgs),
    /// Label lines as boundary / not boundary from reference objects.
    Autolabel(AutolabelArgs),
    /// Train a random forest on a labeled table.
    Train(TrainArgs),
    /// Predict boundary likelihoods and attach them to the network.
    Predict(PredictArgs),
    /// Snap scripted clicks and connect them with least-cost paths.
    Suggest(SuggestArgs),
    /// Buffer-overlay correctness of delineations against a reference.
    Evaluate(EvaluateArgs),
    /// Nearest-neighbour downsampling of a raster.
    Resample(ResampleArgs),
    /// Run a robustness experiment along one dimension.
    Experiment(ExperimentArgs),
    /// Write a synthetic test scene and a matching experiment file.
    Synth(SynthArgs),
    /// Start the HTTP delineation service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    #[arg(long, default_value_t = 10.0)]
    pub compactness: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Simplification tolerance in meters (default: one pixel).
    #[arg(long)]
    pub simplify_tol: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetworkArgs {
    #[arg(long)]
    pub lines: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub dsm: Option<PathBuf>,
    /// Side-sampling half width in meters.
    #[arg(long, default_value_t = 0.4)]
    pub half_width: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AutolabelArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Raster defining the labeling grid.
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long, default_value_t = 0.30)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.8)]
    pub coverage: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub min_samples_leaf: usize,
    /// Features tried per split (default: ceil(sqrt(F))).
    #[arg(long)]
    pub features_per_split: Option<usize>,
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Train even when every label is the same.
    #[arg(long)]
    pub allow_single_class: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Network with `boundary` likelihoods.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the table with predicted likelihoods.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuggestArgs {
    /// Network with `boundary` likelihoods (missing ones count as 0).
    #[arg(long)]
    pub network: PathBuf,
    /// Click file: `{"objects": [{"clicks": [[x, y], ...], "close": bool}]}`.
    #[arg(long)]
    pub clicks: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub snap_tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub delineation: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Buffer radius in meters; repeat for several.
    #[arg(long = "radius", required = true)]
    pub radii: Vec<f64>,
    /// Evaluation pixel size; the grid covers both line sets.
    #[arg(long, conflicts_with = "rgb", required_unless_present = "rgb")]
    pub gsd: Option<f64>,
    /// Evaluate on this raster's grid instead.
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub factor: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment file: test/train project paths and pipeline settings.
    #[arg(long)]
    pub file: PathBuf,
    /// resolution | input | location | parameters | application.
    #[arg(long)]
    pub dim: String,
    /// resolution: downsampling factor.
    #[arg(long)]
    pub factor: Option<usize>,
    /// input: run the variant with (`yes`) or without (`no`) the DSM.
    #[arg(long)]
    pub dsm: Option<String>,
    /// location: project file of the training area.
    #[arg(long)]
    pub train_project: Option<PathBuf>,
    /// parameters: comma-separated segmentation scales.
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<f64>,
    /// application: alternative reference objects.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// application: clicks for the alternative objects.
    #[arg(long)]
    pub clicks: Option<PathBuf>,
    /// application: name of the alternative object set.
    #[arg(long)]
    pub name: Option<String>,
    /// Text table output.
    #[arg(long)]
    pub out: PathBuf,
    /// Full JSON report.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "scene")]
    pub name: String,
    #[arg(long, default_value_t = 500)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: std::net::SocketAddr,
    /// Project request file (same body as `POST /projects`) to preload.
    #[arg(long)]
    pub project: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = commands::init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
