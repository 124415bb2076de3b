use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Audio-visual frame-level emotion recognition: synthetic data,
/// training, inference, evaluation and diagnostics.
#[derive(Debug, Parser)]
#[command(name = "avfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (features, labels, manifests).
    GenSynth(GenSynthArgs),
    /// Train the fusion model.
    Train(TrainArgs),
    /// Train one model per (p, d, l) combination and tabulate results.
    Ablate(AblateArgs),
    /// Predict per-frame labels for every video in a manifest.
    Infer(InferArgs),
    /// Score a predictions directory against gold labels.
    Eval(EvalArgs),
    /// Sweep the decision-level fusion weight of the MLP baseline.
    Baseline(BaselineArgs),
    /// Compare full-model gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[command(flatten)]
    common: Common,
    /// Eight comma-separated class probabilities.
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<f64>>,
    #[arg(long)]
    n_videos: Option<usize>,
    #[arg(long)]
    t_min: Option<usize>,
    #[arg(long)]
    t_max: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    d_a: Option<usize>,
    #[arg(long)]
    visual_noise: Option<f64>,
    #[arg(long)]
    audio_noise: Option<f64>,
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Probability of blacking out each 64-frame visual block.
    #[arg(long)]
    blackout_rate: Option<f64>,
    #[arg(long)]
    val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct Data {
    /// Training manifest.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long)]
    val: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Window {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    median_k: Option<usize>,
}

#[derive(Debug, Args)]
struct Hyper {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: Data,
    #[command(flatten)]
    window: Window,
    #[command(flatten)]
    hyper: Hyper,
    /// Modality dropout probability.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: Data,
    #[command(flatten)]
    window: Window,
    #[command(flatten)]
    hyper: Hyper,
    /// Comma-separated modality dropout probabilities.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<f64>>,
    /// Comma-separated model widths.
    #[arg(long = "d-model", visible_alias = "d", value_delimiter = ',')]
    d_model: Option<Vec<usize>>,
    /// Comma-separated encoder depths.
    #[arg(long = "layers", visible_alias = "l", value_delimiter = ',')]
    layers: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    window: Window,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Videos to predict; defaults to the configured validation manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Smoother: median or majority.
    #[arg(long)]
    smoother: Option<String>,
    /// Also write the voted logits.
    #[arg(long)]
    with_logits: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Directory of `<video_id>.csv` prediction files.
    #[arg(long)]
    predictions: PathBuf,
    /// Manifest holding the gold labels; defaults to the configured
    /// validation manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Count classes absent from both gold and predictions as F1 = 0.
    #[arg(long)]
    include_absent: bool,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: Data,
    /// Comma-separated fusion weights.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[command(flatten)]
    common: Common,
    /// Window length.
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, default_value_t = 16)]
    d_v: usize,
    #[arg(long, default_value_t = 16)]
    d_a: usize,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 3)]
    coords: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Scale one parameter's analytic gradient, `NAME[:FACTOR]`.
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::GradCheck(a) => commands::grad_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
