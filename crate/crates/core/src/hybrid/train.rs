use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{batch_ce, build_model, transfer_cnn, GradMethod, HybridConfig, HybridModel, ModelKind};
use crate::audiodata::{make_batches, Batch, Utterance};
use crate::classicalnn::{argmax, Mode};
use crate::error::{Error, Result};
use crate::gradopt::{OptimizerKind, OptimizerState};
use crate::noisesim::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainRegime {
    #[serde(rename = "baseline_cnn_dnn")]
    BaselineCnnDnn,
    #[serde(rename = "cnn_qnn_scratch")]
    CnnQnnScratch,
    /// Transferred CNN and compressor frozen; only the circuit angles train.
    #[serde(rename = "cnn_qnn_2")]
    CnnQnn2,
    /// Transferred CNN fine-tuned together with the quantum head.
    #[serde(rename = "cnn_qnn_3")]
    CnnQnn3,
}

impl TrainRegime {
    pub const ALL: [TrainRegime; 4] = [
        TrainRegime::BaselineCnnDnn,
        TrainRegime::CnnQnnScratch,
        TrainRegime::CnnQnn2,
        TrainRegime::CnnQnn3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainRegime::BaselineCnnDnn => "baseline_cnn_dnn",
            TrainRegime::CnnQnnScratch => "cnn_qnn_scratch",
            TrainRegime::CnnQnn2 => "cnn_qnn_2",
            TrainRegime::CnnQnn3 => "cnn_qnn_3",
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            TrainRegime::BaselineCnnDnn => ModelKind::CnnDnn,
            _ => ModelKind::CnnQnn,
        }
    }

    pub fn needs_source(self) -> bool {
        matches!(self, TrainRegime::CnnQnn2 | TrainRegime::CnnQnn3)
    }

    /// 30 epochs when training from scratch, 15 when fine-tuning.
    pub fn default_epochs(self) -> usize {
        if self.needs_source() {
            15
        } else {
            30
        }
    }
}

impl fmt::Display for TrainRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainRegime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regime {s:?}")))
    }
}

/// The starting model for a regime: a fresh model, or a transfer from a
/// pre-trained CNN-DNN.
pub fn prepare_model(
    regime: TrainRegime,
    config: &HybridConfig,
    seed: u64,
    source: Option<&HybridModel>,
) -> Result<HybridModel> {
    match (regime.needs_source(), source) {
        (true, None) => Err(Error::invalid(format!("regime {regime} needs a source model"))),
        (true, Some(src)) => {
            if src.config().conv_blocks != config.conv_blocks || src.config().n_classes != config.n_classes {
                return Err(Error::invalid(
                    "the source model's CNN or class count differs from the requested configuration",
                ));
            }
            transfer_cnn(src, config.vqc, regime, seed)
        }
        (false, _) => build_model(regime.model_kind(), config, seed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_classical: f64,
    pub lr_quantum: f64,
    pub grad: GradMethod,
    pub noise: Option<NoiseSpec>,
    pub shuffle_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            batch_size: 256,
            optimizer: OptimizerKind::Adam,
            lr_classical: 1e-3,
            lr_quantum: 1e-2,
            grad: GradMethod::ParameterShift,
            noise: None,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over samples.
    pub cross_entropy: f64,
    pub accuracy: f64,
    pub trainable_param_count: usize,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches; absent for epoch 0.
    pub train_ce: Option<f64>,
    pub val: EvalReport,
    pub seconds: f64,
}

/// Mean cross-entropy and top-1 accuracy in eval mode.
pub fn evaluate(
    model: &mut HybridModel,
    utts: &[Utterance],
    batch_size: usize,
    noise: Option<&NoiseSpec>,
) -> Result<EvalReport> {
    if utts.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut total = 0.0;
    let mut correct = 0usize;
    for batch in make_batches(utts, batch_size, None)? {
        let logits = model.forward(&batch.waveforms, Mode::Eval, noise)?;
        let (loss, _) = batch_ce(&logits, &batch.labels)?;
        total += loss * batch.len() as f64;
        let classes = logits.shape()[1];
        correct += logits
            .data()
            .chunks(classes)
            .zip(&batch.labels)
            .filter(|(row, &label)| argmax(row) == label)
            .count();
    }
    model.clear_cache();
    Ok(EvalReport {
        cross_entropy: total / utts.len() as f64,
        accuracy: correct as f64 / utts.len() as f64,
        trainable_param_count: model.trainable_param_count(),
        sample_count: utts.len(),
    })
}

/// Optimizer state for every trainable tensor, keyed by tensor name.
#[derive(Debug, Clone)]
pub struct Trainer {
    optimizers: BTreeMap<String, OptimizerState>,
    grad: GradMethod,
    noise: Option<NoiseSpec>,
}

impl Trainer {
    pub fn new(model: &HybridModel, opts: &TrainOptions) -> Result<Self> {
        if let Some(spec) = &opts.noise {
            if model.kind() == ModelKind::CnnDnn {
                return Err(Error::invalid("noise applies only to models with a quantum head"));
            }
            spec.validate()?;
        }
        let optimizers = model
            .named_tensors()
            .into_iter()
            .filter(|t| t.trainable)
            .map(|t| {
                let lr = if t.quantum { opts.lr_quantum } else { opts.lr_classical };
                Ok((t.name, OptimizerState::new(opts.optimizer, lr, t.data.len())?))
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            optimizers,
            grad: opts.grad,
            noise: opts.noise,
        })
    }

    /// One mini-batch update. Returns the batch loss before the update.
    pub fn step(&mut self, model: &mut HybridModel, batch: &Batch) -> Result<f64> {
        let (loss, grads) = model.loss_and_grads(&batch.waveforms, &batch.labels, Mode::Train, self.noise.as_ref(), self.grad)?;
        if !loss.is_finite() {
            return Err(Error::numeric("training loss"));
        }
        if !grads.all_finite() {
            return Err(Error::numeric("gradient"));
        }
        for (name, values) in model.tensors_mut() {
            if let (Some(opt), Some(g)) = (self.optimizers.get_mut(&name), grads.get(&name)) {
                opt.step(values, g)?;
            }
        }
        model.clear_cache();
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The checkpoint with the lowest validation cross-entropy.
    pub best: HybridModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric { location } => Error::Numeric {
            location: format!("epoch {epoch}, batch {batch}: {location}"),
        },
        other => other,
    }
}

/// Mini-batch training with a validation pass after every epoch. With zero
/// epochs the model is only evaluated.
pub fn train(
    mut model: HybridModel,
    train_set: &[Utterance],
    val_set: &[Utterance],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if opts.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if opts.epochs == 0 {
        let start = Instant::now();
        let val = evaluate(&mut model, val_set, opts.batch_size, opts.noise.as_ref())?;
        let record = EpochRecord {
            epoch: 0,
            train_ce: None,
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        return Ok(TrainOutcome {
            best: model,
            best_epoch: 0,
            history: vec![record],
        });
    }
    if train_set.is_empty() {
        return Err(Error::invalid("cannot train on an empty split"));
    }
    let mut trainer = Trainer::new(&model, opts)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    let mut history = Vec::with_capacity(opts.epochs);
    let mut best: Option<(HybridModel, usize, f64)> = None;
    for epoch in 1..=opts.epochs {
        let start = Instant::now();
        let batches = make_batches(train_set, opts.batch_size, Some(order_rng.random()))?;
        let mut total = 0.0;
        for (i, batch) in batches.iter().enumerate() {
            let loss = trainer.step(&mut model, batch).map_err(|e| locate(e, epoch, i))?;
            total += loss;
        }
        let val = evaluate(&mut model, val_set, opts.batch_size, opts.noise.as_ref())
            .map_err(|e| locate(e, epoch, batches.len()))?;
        let record = EpochRecord {
            epoch,
            train_ce: Some(total / batches.len() as f64),
            val,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val.cross_entropy < b.2) {
            best = Some((model.clone(), epoch, val.cross_entropy));
        }
        history.push(record);
    }
    let (best, best_epoch, _) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
    })
}
