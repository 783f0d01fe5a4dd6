//! `fcnseg`: dataset tooling, training, evaluation, cross-validation,
//! timing, post-processing and reporting.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcnseg::dataio::{DatasetTag, Split};
use fcnseg::models::Variant;
use fcnseg::SolverKind;

#[derive(Parser, Debug)]
#[command(name = "fcnseg", version, about = "Fully convolutional ROI segmentation of thigh MR slices")]
struct Cli {
    /// Print machine-readable key=value output instead of tables.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build dataset manifests or synthetic phantom datasets.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// k-fold cross-validation.
    Cv(CvArgs),
    /// Time per-image inference and post-processing.
    Bench(BenchArgs),
    /// Post-process every mask in a directory.
    Postproc(PostprocArgs),
    /// Tabulate finished runs.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Write a manifest for a directory of `images/<subject>/<NN>.png` and
    /// `masks/<subject>/<NN>.png`. AD expects `ROOT/md` and `ROOT/wd`.
    Build {
        #[arg(long)]
        tag: DatasetTag,
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Generate phantom subjects with masks and a manifest.
    Phantom {
        #[arg(long)]
        subjects: usize,
        #[arg(long, value_parser = ["13", "26"])]
        scans: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 96)]
        size: usize,
        /// Manifest kind to write (md keeps one mid-scan per subject).
        #[arg(long, default_value = "wd")]
        tag: DatasetTag,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Args, Debug, Clone)]
struct OutArg {
    /// Output directory. Defaults to `$FCNSEG_OUT/<command>`, or
    /// `runs/<command>` when the variable is unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Experiment settings. A `--config` file is applied first; flags override it.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// key=value file, such as a previous run's `config.resolved`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "rms-decay")]
    rms_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "loss-scale")]
    loss_scale: Option<f64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `tiny`, `small`, or five comma-separated stage widths.
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long = "fc-width")]
    fc_width: Option<usize>,
    #[arg(long, value_parser = ["on", "off"])]
    postproc: Option<String>,
    /// Post-processing steps, e.g. `median:3,open:disk:1,keep-largest,fill-holes`.
    #[arg(long = "pipeline")]
    pipeline: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, value_parser = ["on", "off"], default_value = "on")]
    postproc: String,
    #[arg(long = "pipeline")]
    pipeline: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Folds trained concurrently (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    /// Use at most this many images.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_parser = ["on", "off"], default_value = "on")]
    postproc: String,
    #[arg(long = "pipeline")]
    pipeline: Option<String>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct PostprocArgs {
    #[arg(long = "pipeline", default_value = "median:3,open:disk:1,keep-largest,fill-holes")]
    pipeline: String,
    /// Directory of paletted PNG masks.
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories (searched recursively for metrics.kv and bench.kv).
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} message={message}", e.kind());
            ExitCode::from(1)
        }
    }
}
