//! `mortonnet`: command-line driver for the point-feature pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mortonnet", version, about = "Self-supervised point features from Z-ordered sequences")]
pub struct Cli {
    /// TOML configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled point cloud.
    Gen(GenArgs),
    /// Generate normalized Z-order sequences from a cloud.
    Sequences(SequencesArgs),
    /// Train the sequence model on a sequence dataset.
    Train(TrainArgs),
    /// Score a checkpoint's ρ-accuracy on a sequence dataset.
    Eval(EvalArgs),
    /// Extract per-point features with a trained model.
    Extract(ExtractArgs),
    /// Train and evaluate the pointwise classifier on features.
    Classify(ClassifyArgs),
    /// Compare ordering schemes end to end at a matched budget.
    AblateOrder(AblateArgs),
    /// Label-fraction study for learned versus raw-coordinate features.
    LabelStudy(LabelStudyArgs),
}

#[derive(Args)]
pub struct GenArgs {
    /// Shape kind: plane, sphere, cylinder, box, torus or composite.
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long)]
    pub n_points: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SequencesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// morton, x, y, z, random or random:<seed>.
    #[arg(long)]
    pub scheme: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Sequence dataset written by `sequences`.
    #[arg(long)]
    pub data: PathBuf,
    /// Best-validation checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV log; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Directory for a resumable state file after every epoch.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Continue from a state file written to `--state-dir`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// XYZ cloud; labels, if present, are stored with the features.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ClassifyArgs {
    /// Labeled feature file used for training.
    #[arg(long)]
    pub features: PathBuf,
    /// Labeled feature file for evaluation; without it a seeded fraction
    /// of `--features` is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Metrics CSV; the confusion matrix goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Also run Morton ordering at these sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Vec<usize>,
}

#[derive(Args)]
pub struct LabelStudyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
