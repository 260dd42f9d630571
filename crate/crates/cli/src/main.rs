//! `protomixer`: synthetic corpora, prototype reduction, Mixer training,
//! cross-validation, k sweeps and evaluation.

mod commands;
mod config_file;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protomixer::train::{DomainSource, OptimizerKind};

#[derive(Parser, Debug)]
#[command(name = "protomixer", version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus of embedding bags with a manifest.
    GenSynthetic(GenArgs),
    /// Reduce every bag of a manifest to k prototypes.
    Reduce(ReduceArgs),
    /// Train one model on every bag of a prototype manifest.
    Train(TrainArgs),
    /// Repeated stratified k-fold cross-validation.
    Crossval(CrossvalArgs),
    /// Reduce and cross-validate for each k in a list.
    SweepK(SweepArgs),
    /// Score a checkpoint on a prototype manifest.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenArgs {
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long)]
    bags: usize,
    #[arg(long)]
    classes: usize,
    /// Embedding width.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Number of domains; defaults to one per bag.
    #[arg(long)]
    domains: Option<usize>,
    #[arg(long, default_value_t = 40)]
    min_patches: usize,
    #[arg(long, default_value_t = 80)]
    max_patches: usize,
    #[arg(long, default_value_t = 0.3)]
    signal_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    domain_shift: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 3)]
    background_centers: usize,
    #[arg(long, default_value_t = 1.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    confounding: f64,
}

#[derive(Args, Debug, Clone)]
struct KMeansArgs {
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ReduceArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    kmeans: KMeansArgs,
}

/// Architecture sizes other than those read off the data (k, N, classes).
#[derive(Args, Debug, Clone)]
struct ArchArgs {
    #[arg(long, default_value_t = 1024)]
    token_hidden: usize,
    #[arg(long, default_value_t = 2048)]
    channel_hidden: usize,
    #[arg(long, default_value_t = 12)]
    blocks: usize,
    #[arg(long, default_value_t = 512)]
    domain_hidden: usize,
    /// Skip the layer norm before pooling.
    #[arg(long)]
    no_final_norm: bool,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    adam_eps: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Start the reversal schedule at 0 instead of 1.
    #[arg(long)]
    lambda_offset: bool,
    /// Constant reversal weight instead of the schedule.
    #[arg(long)]
    fixed_lambda: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Domain labels: one per slide, or the manifest's domain_id.
    #[arg(long, default_value = "slide")]
    domain_source: DomainSource,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report parameter count, peak memory and seconds per epoch.
    #[arg(long)]
    profile: bool,
}

#[derive(Args, Debug, Clone)]
struct CvArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Run only the first folds of each repeat.
    #[arg(long)]
    fold_limit: Option<usize>,
    /// Worker threads for independent folds.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct CrossvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    cv: CvArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SweepArgs {
    /// Manifest of raw embedding bags.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,5,6,8,10,12,16")]
    k_list: Vec<usize>,
    #[command(flatten)]
    kmeans: KMeansArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[command(flatten)]
    cv: CvArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for metrics.csv and record.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<protomixer::Error>() {
            return match e {
                protomixer::Error::Config(_) | protomixer::Error::Parameter(_) => 2,
                protomixer::Error::NonFinite { .. } => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

/// The error chain, skipping causes their parent already quotes.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let raw: Vec<String> = std::env::args().collect();
    let args = match config_file::expand(raw.clone()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            return ExitCode::from(exit_code(&e));
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a, &args),
        Command::Reduce(a) => commands::reduce(a, &args),
        Command::Train(a) => commands::train(a, &args),
        Command::Crossval(a) => commands::crossval(a, &args),
        Command::SweepK(a) => commands::sweep_k(a, &args),
        Command::Eval(a) => commands::eval(a, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
