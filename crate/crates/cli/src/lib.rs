//! Batch commands for generating, labeling, splitting, training on and
//! evaluating accessible-depth datasets.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 configuration error, 3 I/O
//! error, 4 missing prerequisite, 5 grid or frame-count mismatch.

use std::path::PathBuf;

use cad_autodiff::AutodiffError;
use cad_core::{DatasetError, EvalError, PolarGridSpec};
use cad_net::NetError;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod plot;

pub use commands::run;
pub use plot::render_svg;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
}

fn dataset_code(e: &DatasetError) -> u8 {
    match e {
        DatasetError::SpecMismatch(_) => 5,
        DatasetError::InvalidFractions(_) | DatasetError::InsufficientLabels { .. } => 2,
        _ => 3,
    }
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => 2,
                CliError::Missing(_) => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<NetError>() {
            return match e {
                NetError::SpecMismatch(_) => 5,
                NetError::Config(_) | NetError::Json(_) | NetError::Data(_) | NetError::EmptyBatch => 2,
                NetError::Io(_) => 3,
                NetError::Dataset(d) => dataset_code(d),
                NetError::Autodiff(AutodiffError::NonFinite { .. }) => 1,
                NetError::Autodiff(AutodiffError::Io(_) | AutodiffError::Checkpoint(_)) => 3,
                NetError::Autodiff(_) | NetError::Geometry(_) => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return dataset_code(e);
        }
        if let Some(EvalError::SpecMismatch(_)) = cause.downcast_ref::<EvalError>() {
            return 5;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "cad", version, about = "Accessible-depth datasets, training and evaluation")]
pub struct Cli {
    /// Worker threads; every command currently runs on one thread, so
    /// results are deterministic for any value.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset (frames, poses, tags, scenes).
    SimGen(SimGenArgs),
    /// Write label files for every sample of a dataset.
    Label(LabelArgs),
    /// Reassign samples to labeled-train, unlabeled-train and validation.
    Split(SplitArgs),
    /// Train a network on a split dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a report.
    Eval(EvalArgs),
    /// Predict the profile of one sample.
    Predict(PredictArgs),
    /// Render a profile as an SVG polar plot.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridPreset {
    /// 9.6 m, 32 x 48
    Desk,
    /// 15 m, 128 x 384
    Full,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Base grid.
    #[arg(long, value_enum, default_value_t = GridPreset::Desk)]
    pub grid: GridPreset,
    /// Override the maximum radius (m).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Override the number of radial bins (multiple of 8).
    #[arg(long)]
    pub n_r: Option<usize>,
    /// Override the number of sectors (multiple of 8).
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Override the lower height bound (m).
    #[arg(long)]
    pub z_min: Option<f64>,
    /// Override the upper height bound (m).
    #[arg(long)]
    pub z_max: Option<f64>,
}

impl GridArgs {
    pub fn spec(&self) -> Result<PolarGridSpec, CliError> {
        let base = match self.grid {
            GridPreset::Desk => PolarGridSpec::desk(),
            GridPreset::Full => PolarGridSpec::full(),
        };
        PolarGridSpec::new(
            self.radius.unwrap_or(base.max_radius()),
            self.z_min.unwrap_or(base.z_min()),
            self.z_max.unwrap_or(base.z_max()),
            self.n_r.unwrap_or(base.n_r()),
            self.n_phi.unwrap_or(base.n_phi()),
        )
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LidarPreset {
    /// 32 channels, 1 degree azimuth steps
    Desk,
    /// 16 channels over +-15 degrees
    Vlp16,
    /// High-resolution reference sensor, 1.8 m mount
    Dense,
}

#[derive(Debug, Clone, Args)]
pub struct SimGenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene difficulty: bare, standard, dynamic or static-check.
    #[arg(long, default_value = "standard")]
    pub profile: String,
    /// Historical frames per sample.
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    /// Seconds between frames.
    #[arg(long, default_value_t = 0.2)]
    pub period: f64,
    #[arg(long, value_enum, default_value_t = LidarPreset::Desk)]
    pub lidar: LidarPreset,
    /// Merge scans from rings of 8 viewpoints at 2 m and 12 at 5 m into
    /// each current frame.
    #[arg(long)]
    pub multi_view: bool,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON file with traversability thresholds; missing fields keep defaults.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Estimate labels from the aggregated frames instead of the scenes.
    #[arg(long)]
    pub from_points: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    pub labeled: f64,
    #[arg(long, default_value_t = 0.5)]
    pub unlabeled: f64,
    #[arg(long, default_value_t = 0.25)]
    pub validation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Sam,
    Merge,
    Single,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Final checkpoint path; periodic checkpoints get an `.epochN` suffix.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON training configuration (see README); flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the reduced-width network.
    #[arg(long, conflicts_with = "config")]
    pub small: bool,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Seed for initialization and sample order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the unlabeled loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Per-epoch JSON lines; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    All,
    LabeledTrain,
    UnlabeledTrain,
    Validation,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSON report path; the table goes to stdout and `<report>.txt`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Sample id from the manifest.
    #[arg(long)]
    pub sample: String,
    /// Output profile file (label format, unlabeled flag).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Profile or label file.
    #[arg(long)]
    pub profile: PathBuf,
    /// Ground-truth label drawn as an outline.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// KITTI frames in current-frame coordinates, current first.
    #[arg(long, num_args = 1..)]
    pub points: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 800)]
    pub size: u32,
}
