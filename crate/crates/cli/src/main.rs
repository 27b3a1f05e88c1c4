//! `bodyfit` command-line tool.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bodyfit", version, about = "Synthetic body-model data, regressor training, fitting and evaluation")]
pub struct Cli {
    /// Seed for all randomness of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML or JSON file with per-command defaults; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Main output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Record the wall-clock time in manifests (makes outputs non-reproducible).
    #[arg(long, global = true)]
    pub timestamp: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset (JSON lines).
    Gen(GenArgs),
    /// Train the grid-to-parameters regressor.
    Train(TrainArgs),
    /// Train one regressor per labelled fraction and tabulate validation errors.
    Sweep(SweepArgs),
    /// Fit pose and shape directly to each example's annotations.
    Fit(FitArgs),
    /// Score predictions or a trained regressor against a dataset.
    Eval(EvalArgs),
    /// Check analytic gradients through the whole chain against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Vertex count of the generated body model.
    #[arg(long)]
    pub vertices: Option<usize>,
    #[arg(long, short = 'n')]
    pub examples: Option<usize>,
    /// Grid side length in cells.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Number of part groups: 1, 3, 6, 12 or 24.
    #[arg(long)]
    pub parts: Option<usize>,
    /// Probability of reassigning each foreground cell.
    #[arg(long)]
    pub corruption: Option<f64>,
    /// Share of examples with latent and 3D labels; all get 2D joints.
    #[arg(long)]
    pub labelled_fraction: Option<f64>,
    #[arg(long)]
    pub difficulty: Option<f64>,
    /// Append left/right mirrored copies.
    #[arg(long)]
    pub mirror: bool,
    /// Also write colour-coded PNGs of the first few grids into this directory.
    #[arg(long)]
    pub png_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub png_count: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Held-out set logged after every epoch.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Training log CSV (default: next to the checkpoint).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Loss terms to train with, e.g. `all`, `2d`, `latent`, `latent+3d`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub labelled_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Descending, from 1 to 0.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Loss terms to fit, e.g. `3d`, `2d`, `2d+3d`, `all`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Start from the rest pose instead of perturbed ground truth.
    #[arg(long, conflicts_with = "sigma")]
    pub zero_init: bool,
    /// Noise added to the ground-truth start, per coordinate.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Metrics CSV (default: next to the predictions).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground-truth dataset.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub configs: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    pub step: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
