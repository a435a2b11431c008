use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "dino4d", version, about = "Synthetic 4D reconstruction harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic scene suite as bundles.
    Gen(GenArgs),
    /// Train a model on scene bundles.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metric report.
    Eval(EvalArgs),
    /// Run the predictor and the diffusion refiner on one scene, writing pointmaps.
    Refine(RefineArgs),
    /// Write a pointmap as an ASCII PLY file.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags take precedence over its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed for every stochastic stage.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of scene bundles.
    #[arg(long, value_name = "DIR")]
    pub scenes: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of held-out scene bundles.
    #[arg(long, value_name = "DIR")]
    pub scenes: Option<PathBuf>,
    /// Also score the diffusion-refined reconstructions.
    #[arg(long)]
    pub refine: bool,
    /// APD thresholds in metres, comma separated.
    #[arg(long, value_name = "CSV")]
    pub thresholds: Option<String>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Scene bundle directory; defaults to the first scene of the scenes directory.
    #[arg(long, value_name = "DIR")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Destination PLY file.
    #[arg(long, value_name = "PATH")]
    pub ply: PathBuf,
    /// Pointmap JSON file to export.
    #[arg(long, value_name = "PATH", conflicts_with_all = ["checkpoint", "scene"])]
    pub input: Option<PathBuf>,
    /// Predict the pointmap with this checkpoint instead of reading one.
    #[arg(long, value_name = "PATH", requires = "scene")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub scene: Option<PathBuf>,
    /// Frame j of the (0, j) pair to predict; defaults to the last frame.
    #[arg(long, value_name = "J")]
    pub frame: Option<usize>,
    /// Export the refined instead of the coarse reconstruction.
    #[arg(long)]
    pub refine: bool,
}
