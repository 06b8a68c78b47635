//! Command-line front end: argument definitions, run configuration, and
//! one function per subcommand.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;
pub use config::{RunConfig, KEYS};

#[derive(Debug, Parser)]
#[command(name = "liverformer", version, about = "Liver segment segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic phantom datasets.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Resample, normalize and crop every case of a manifest.
    Preprocess(PreprocessArgs),
    /// Register a moving image to a fixed image and save the velocity field.
    Register(RegisterArgs),
    /// Expand a dataset by registration-based synthesis.
    Augment(AugmentArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Segment images with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predicted labels against ground truth.
    Evaluate(EvaluateArgs),
    /// Paired t-tests between two evaluation reports.
    Compare(CompareArgs),
    /// Export one slice of a volume as a PGM image.
    View(ViewArgs),
}

#[derive(Debug, Subcommand)]
pub enum PhantomCommand {
    /// Generate labeled phantoms and their manifest.
    Gen(PhantomGenArgs),
}

#[derive(Debug, Args)]
pub struct PhantomGenArgs {
    /// Number of cases.
    #[arg(long)]
    pub n: usize,
    /// Seed of the first case; case k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration (phantom.* keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration (preprocess.* keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fixed image (NIfTI).
    #[arg(long)]
    pub fixed: PathBuf,
    /// Moving image (NIfTI).
    #[arg(long)]
    pub moving: PathBuf,
    /// Output velocity field; a `.txt` sidecar is written next to it.
    #[arg(long)]
    pub out_field: PathBuf,
    /// Also write the warped moving image here.
    #[arg(long)]
    pub warped: Option<PathBuf>,
    /// Run configuration (augment.* registration keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Pool manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Template case IDs, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub templates: Vec<String>,
    /// Output directory for the expanded dataset.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides augment.partner_rule: exclude-self or exclude-templates.
    #[arg(long)]
    pub partner_rule: Option<String>,
    /// Print the counting summary without registering anything.
    #[arg(long)]
    pub plan_only: bool,
    /// Run configuration (augment.* keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest; original cases are split, synthesized ones join
    /// training when both sources are training cases.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run configuration (model.* and train.* keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for the log, checkpoints, config and split.
    #[arg(long)]
    pub out_run: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A manifest, or a single NIfTI image.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory for a manifest input, or label file for an image.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted labels: a manifest or a NIfTI label volume.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth in the same form as --pred.
    #[arg(long)]
    pub truth: PathBuf,
    /// Output directory for report.json, report.csv and report.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Two report.json files: method A then method B.
    #[arg(long, num_args = 2, required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ViewArgs {
    /// NIfTI volume.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// axial, coronal or sagittal.
    #[arg(long, default_value = "axial")]
    pub axis: String,
    /// Slice index; defaults to the middle slice.
    #[arg(long)]
    pub index: Option<usize>,
    /// Read the volume as labels.
    #[arg(long)]
    pub labels: bool,
    /// Output PGM file.
    #[arg(long)]
    pub out: PathBuf,
}
