// SPDX-License-Identifier: MIT OR Apache-2.0

//! `attriprobe` command-line runner.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 numeric.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use attriprobe::Execution;
use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "attriprobe", version, about = "Train and analyse knowledge-source attribution probes")]
pub struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a probe on a title-disjoint split and report held-out metrics.
    Train(TrainArgs),
    /// Score a dataset with a saved probe.
    Eval(EvalArgs),
    /// Per-layer two-component PCA of the activations.
    Pca(PcaArgs),
    /// Raw and smoothed layer-aggregation weights of a layer probe.
    Layers(LayersArgs),
    /// TF-IDF lexical-bias audit with stratified cross-validation.
    Bias(BiasArgs),
    /// Fisher exact test and relative risk of source mismatch versus errors.
    Mismatch(MismatchArgs),
    /// Generate a planted-signal (optionally decoy) synthetic dataset.
    Synth(SynthArgs),
    /// Grid search over dropout, weight decay, learning rate (and bottleneck).
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// final-lr, layer-lr or layer-mlp.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// MLP bottleneck width.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of records (by title) held out for testing.
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// 1-based layers to analyse (default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Skip mean-centering.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Gaussian smoothing width in layers.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON lines of `{id, title, passage, label}`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_features: Option<usize>,
    /// 1 for unigrams, 2 for unigrams and bigrams.
    #[arg(long)]
    pub ngram_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MismatchArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSON lines of `{source_required, predicted, correct}`.
    #[arg(long, conflicts_with_all = ["data", "probe"])]
    pub records: Option<PathBuf>,
    /// Dataset whose records carry `correct` and `source_required`.
    #[arg(long, requires = "probe")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// 1-based layer carrying the signal.
    #[arg(long)]
    pub planted_layer: Option<usize>,
    /// Separation μ along the signal direction.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub titles: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Agreement rate of the decoy; enables decoy mode.
    #[arg(long)]
    pub rho: Option<f64>,
    /// 1-based decoy layer.
    #[arg(long)]
    pub decoy_layer: Option<usize>,
    #[arg(long)]
    pub decoy_mu: Option<f64>,
    /// signed or magnitude.
    #[arg(long)]
    pub decoy_kind: Option<String>,
    #[arg(long)]
    pub test_n_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// layer-lr or layer-mlp.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs_per_config: Option<usize>,
}

fn configure_threads() -> CliResult<usize> {
    match std::env::var("ATTRIPROBE_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| CliError::usage(format!("ATTRIPROBE_THREADS must be a positive integer, got {v:?}")))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::usage(format!("cannot size thread pool: {e}")))?;
            Ok(n)
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = configure_threads()?;
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let ctx = commands::Context { exec, threads: if cli.sequential { 1 } else { threads } };
    match cli.command {
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Pca(a) => commands::pca(&ctx, a),
        Command::Layers(a) => commands::layers(&ctx, a),
        Command::Bias(a) => commands::bias(&ctx, a),
        Command::Mismatch(a) => commands::mismatch(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Grid(a) => commands::grid(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("attriprobe: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
