//! `qtransfer`: synthetic data, dataset manifests, training, evaluation and
//! gradient checks for the hybrid models.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or input error, 3 numeric
//! failure during training or evaluation.

mod commands;
mod gradcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtransfer::gradopt::OptimizerKind;
use qtransfer::hybrid::TrainRegime;
use qtransfer::noisesim::NoiseSpec;
use qtransfer::Error;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "qtransfer", version, about = "Hybrid CNN-QNN transfer learning for spoken commands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a folder-per-class tone dataset with a testing list.
    Synth(SynthArgs),
    /// Split a dataset and write its JSONL manifest.
    Manifest(ManifestArgs),
    /// Train under one of the four regimes.
    Train(TrainArgs),
    /// Evaluate a saved model on a split, optionally under noise.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    clips: usize,
    #[arg(long, default_value_t = 0.5)]
    duration: f64,
    #[arg(long, default_value_t = 8000)]
    rate: u32,
    #[arg(long, default_value_t = 10)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root with one folder per label.
    #[arg(long)]
    data: PathBuf,
    /// Minimum number of label folders the dataset must have.
    #[arg(long, default_value_t = qtransfer::audiodata::COMMAND_COUNT)]
    min_classes: usize,
}

#[derive(Args)]
struct ManifestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "manifest.jsonl")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GradArg {
    Shift,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Re-run with the resolved settings stored in a previous report; only
    /// `--out` is taken from the command line.
    #[arg(long, conflicts_with_all = ["regime", "data"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    regime: Option<String>,
    /// Pre-trained CNN-DNN model for the transfer regimes.
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = qtransfer::audiodata::COMMAND_COUNT)]
    min_classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to 30 for from-scratch regimes and 15 for fine-tuning.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 8)]
    wires: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, value_enum, default_value_t = GradArg::Shift)]
    grad: GradArg,
    /// Finite-difference step used with `--grad fd`.
    #[arg(long, default_value_t = qtransfer::gradopt::DEFAULT_FD_EPS)]
    eps: f64,
    /// Noise during training, e.g. `depolarizing:0.01`.
    #[arg(long)]
    noise: Option<NoiseSpec>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    lr_classical: f64,
    #[arg(long, default_value_t = 1e-2)]
    lr_quantum: f64,
    /// Output directory for the model, metrics log and report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Validation,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Split seed; must match the one used for training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    noise: Option<NoiseSpec>,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Where to write the JSON report; printed to stdout either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Finite-difference step for the circuit checks.
    #[arg(long, default_value_t = qtransfer::gradopt::DEFAULT_FD_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    circuits: usize,
    #[arg(long, default_value_t = 1e-4)]
    threshold: f64,
}

/// Failure modes mapped onto the exit-code contract.
#[derive(Debug)]
enum Failure {
    Check(String),
    Usage(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric { .. } => Failure::Numeric(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Manifest(a) => commands::manifest(&a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => gradcheck::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn parse_regime(s: &str) -> Result<TrainRegime, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}
