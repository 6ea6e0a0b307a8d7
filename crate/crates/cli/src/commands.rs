use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use qtransfer::audiodata::synth::{generate_tone_dataset, ToneDatasetSpec};
use qtransfer::audiodata::{split_dataset, DatasetSplit, Part, SplitOptions};
use qtransfer::gradopt::OptimizerKind;
use qtransfer::hybrid::{
    evaluate, load_model, prepare_model, save_model, train as train_model, EpochRecord, EvalReport, GradMethod,
    HybridConfig, ModelKind, TrainOptions, TrainRegime,
};
use qtransfer::noisesim::NoiseSpec;
use qtransfer::vqc::VqcConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{parse_regime, EvalArgs, Failure, GradArg, ManifestArgs, SplitArg, SynthArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.safetensors";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REPORT_FILE: &str = "report.json";

pub fn synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec = ToneDatasetSpec {
        classes: a.classes,
        clips_per_class: a.clips,
        duration_s: a.duration,
        sample_rate: a.rate,
        test_per_class: a.test_per_class,
        seed: a.seed,
    };
    generate_tone_dataset(&a.out, &spec)?;
    println!(
        "wrote {} classes x {} clips to {}",
        a.classes,
        a.clips,
        a.out.display()
    );
    Ok(())
}

fn load_split(data: &Path, seed: u64, min_classes: usize) -> Result<DatasetSplit, Failure> {
    if !data.is_dir() {
        return Err(Failure::Usage(format!("dataset root {} does not exist", data.display())));
    }
    Ok(split_dataset(data, seed, &SplitOptions { min_classes })?)
}

pub fn manifest(a: &ManifestArgs) -> Result<(), Failure> {
    let split = load_split(&a.data.data, a.seed, a.data.min_classes)?;
    let records = split.write_manifest(&a.out)?;
    println!("labels {}", split.label_names.len());
    for part in [Part::Train, Part::Validation, Part::Test] {
        println!("{} {}", part.name(), split.indices(part).len());
    }
    println!("wrote {} rows to {}", records.len(), a.out.display());
    Ok(())
}

/// Every effective training setting; stored in the report so a run can be
/// repeated with `train --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub regime: TrainRegime,
    pub from: Option<PathBuf>,
    pub data: PathBuf,
    pub min_classes: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub wires: usize,
    pub layers: usize,
    pub grad: GradArg,
    pub eps: f64,
    pub noise: Option<NoiseSpec>,
    pub optimizer: OptimizerKind,
    pub lr_classical: f64,
    pub lr_quantum: f64,
}

impl RunConfig {
    fn from_args(a: &TrainArgs) -> Result<Self, Failure> {
        let regime = parse_regime(a.regime.as_deref().expect("clap requires --regime"))?;
        Ok(RunConfig {
            regime,
            from: a.from.clone(),
            data: a.data.clone().expect("clap requires --data"),
            min_classes: a.min_classes,
            seed: a.seed,
            epochs: a.epochs.unwrap_or(regime.default_epochs()),
            batch_size: a.batch_size,
            wires: a.wires,
            layers: a.layers,
            grad: a.grad,
            eps: a.eps,
            noise: a.noise,
            optimizer: a.optimizer.into(),
            lr_classical: a.lr_classical,
            lr_quantum: a.lr_quantum,
        })
    }

    fn grad_method(&self) -> GradMethod {
        match self.grad {
            GradArg::Shift => GradMethod::ParameterShift,
            GradArg::Fd => GradMethod::FiniteDiff { eps: self.eps },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_ce: Option<f64>,
    pub val_ce: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

impl From<&EpochRecord> for MetricRow {
    fn from(r: &EpochRecord) -> Self {
        MetricRow {
            epoch: r.epoch,
            train_ce: r.train_ce,
            val_ce: r.val.cross_entropy,
            val_acc: r.val.accuracy,
            seconds: r.seconds,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: RunConfig,
    pub labels: Vec<String>,
    pub split: SplitCounts,
    pub metrics: Vec<MetricRow>,
    pub best_epoch: usize,
    /// Validation report of the saved checkpoint.
    pub best: EvalReport,
    pub trainable_param_count: usize,
    pub total_param_count: usize,
    pub wall_seconds: f64,
    pub model_file: PathBuf,
    pub model_sha256: String,
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn read_config(path: &Path) -> Result<RunConfig, Failure> {
    let report: serde_json::Value = serde_json::from_slice(&fs::read(path)?)?;
    let config = report
        .get("config")
        .ok_or_else(|| Failure::Usage(format!("{} has no config section", path.display())))?;
    Ok(serde_json::from_value(config.clone())?)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = match &a.config {
        Some(path) => read_config(path)?,
        None => RunConfig::from_args(&a)?,
    };
    run_training(&cfg, &a.out)
}

fn run_training(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let started = Instant::now();
    let source = match (cfg.regime.needs_source(), &cfg.from) {
        (true, None) => {
            return Err(Failure::Usage(format!("regime {} requires --from <model file>", cfg.regime)));
        }
        (false, Some(_)) => {
            return Err(Failure::Usage(format!("regime {} does not take --from", cfg.regime)));
        }
        (true, Some(path)) => Some(load_model(path)?),
        (false, None) => None,
    };
    if cfg.noise.is_some() && cfg.regime.model_kind() == ModelKind::CnnDnn {
        return Err(Failure::Usage("--noise applies only to quantum-head regimes".into()));
    }
    let split = load_split(&cfg.data, cfg.seed, cfg.min_classes)?;
    let train_set = split.load_part(Part::Train)?;
    let val_set = split.load_part(Part::Validation)?;
    let config = HybridConfig {
        n_classes: split.label_names.len(),
        vqc: VqcConfig::new(cfg.wires, cfg.layers),
        ..HybridConfig::default()
    };
    let model = prepare_model(cfg.regime, &config, cfg.seed, source.as_ref())?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer,
        lr_classical: cfg.lr_classical,
        lr_quantum: cfg.lr_quantum,
        grad: cfg.grad_method(),
        noise: cfg.noise,
        shuffle_seed: cfg.seed,
    };

    fs::create_dir_all(out)?;
    let mut log = BufWriter::new(File::create(out.join(METRICS_FILE))?);
    let mut log_error = None;
    let mut rows = Vec::new();
    let outcome = train_model(model, &train_set, &val_set, &opts, |r| {
        let row = MetricRow::from(r);
        println!(
            "epoch {:>3}  train_ce {}  val_ce {:.4}  val_acc {:.4}  {:.1}s",
            row.epoch,
            row.train_ce.map_or("-".to_string(), |v| format!("{v:.4}")),
            row.val_ce,
            row.val_acc,
            row.seconds
        );
        let line = serde_json::to_string(&row).expect("metric rows serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_error.get_or_insert(e);
        }
        rows.push(row);
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }

    let model_path = out.join(MODEL_FILE);
    save_model(&outcome.best, &model_path)?;
    let best = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .expect("best epoch is in the history")
        .val;
    let report = TrainReport {
        config: cfg.clone(),
        labels: split.label_names.clone(),
        split: SplitCounts {
            train: split.train.len(),
            validation: split.validation.len(),
            test: split.test.len(),
        },
        metrics: rows,
        best_epoch: outcome.best_epoch,
        best,
        trainable_param_count: outcome.best.trainable_param_count(),
        total_param_count: outcome.best.total_param_count(),
        wall_seconds: started.elapsed().as_secs_f64(),
        model_sha256: sha256_file(&model_path)?,
        model_file: model_path,
    };
    fs::write(out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?)?;
    println!(
        "best epoch {}: val_ce {:.4} val_acc {:.4}; {} trainable of {} parameters",
        report.best_epoch, best.cross_entropy, best.accuracy, report.trainable_param_count, report.total_param_count
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub model: PathBuf,
    pub model_sha256: String,
    pub kind: ModelKind,
    pub data: PathBuf,
    pub seed: u64,
    pub split: String,
    pub noise: Option<NoiseSpec>,
    pub batch_size: usize,
    pub report: EvalReport,
    pub total_param_count: usize,
}

pub fn eval(a: &EvalArgs) -> Result<(), Failure> {
    let mut model = load_model(&a.model)?;
    if a.noise.is_some() && model.kind() == ModelKind::CnnDnn {
        return Err(Failure::Usage("--noise applies only to models with a quantum head".into()));
    }
    let split = load_split(&a.data.data, a.seed, a.data.min_classes)?;
    if split.label_names.len() != model.config().n_classes {
        return Err(Failure::Usage(format!(
            "model has {} classes but the dataset has {}",
            model.config().n_classes,
            split.label_names.len()
        )));
    }
    let part = match a.split {
        SplitArg::Validation => Part::Validation,
        SplitArg::Test => Part::Test,
    };
    let utts = split.load_part(part)?;
    let report = evaluate(&mut model, &utts, a.batch_size, a.noise.as_ref())?;
    let out = EvalOutput {
        model: a.model.clone(),
        model_sha256: sha256_file(&a.model)?,
        kind: model.kind(),
        data: a.data.data.clone(),
        seed: a.seed,
        split: part.name().to_string(),
        noise: a.noise,
        batch_size: a.batch_size,
        report,
        total_param_count: model.total_param_count(),
    };
    let text = serde_json::to_string_pretty(&out)?;
    println!("{text}");
    if let Some(path) = &a.out {
        fs::write(path, &text)?;
    }
    Ok(())
}
