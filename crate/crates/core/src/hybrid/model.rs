use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audiodata::COMMAND_COUNT;
use crate::classicalnn::{default_conv_configs, softmax_ce, Activation, Cnn, ConvBlockConfig, Dense, Mode, Tensor};
use crate::error::{Error, Result};
use crate::gradopt::{finite_diff_grad, parameter_shift_grad, GradientVector};
use crate::noisesim::{noisy_qnn_forward_angles, NoiseSpec};
use crate::vqc::{expectations_unchecked, param_count, VqcConfig, VqcParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CnnDnn,
    CnnQnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CnnDnn => "cnn_dnn",
            ModelKind::CnnQnn => "cnn_qnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Hidden widths of the DNN head after the CNN features.
    pub dnn_hidden: Vec<usize>,
    pub n_classes: usize,
    pub vqc: VqcConfig,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            conv_blocks: default_conv_configs(),
            dnn_hidden: vec![128, 256, 512],
            n_classes: COMMAND_COUNT,
            vqc: VqcConfig::default(),
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks.is_empty() {
            return Err(Error::invalid("at least one conv block is required"));
        }
        for b in &self.conv_blocks {
            b.validate()?;
        }
        if self.n_classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if self.dnn_hidden.is_empty() || self.dnn_hidden.contains(&0) {
            return Err(Error::invalid("DNN hidden widths must be positive"));
        }
        self.vqc.validate()
    }
}

/// Which components receive gradient updates; `true` means trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub cnn: bool,
    pub dnn: bool,
    pub compressor: bool,
    pub vqc: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        cnn: true,
        dnn: true,
        compressor: true,
        vqc: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GradMethod {
    ParameterShift,
    FiniteDiff { eps: f64 },
}

#[derive(Debug, Clone)]
pub struct QnnHead {
    /// Dense map from CNN features to one value per wire.
    pub compressor: Dense,
    pub params: VqcParams,
    pub cfg: VqcConfig,
    class_matrix: Tensor,
}

impl QnnHead {
    /// Fixed `[n_wires, n_classes]` projection from Z expectations to logits.
    pub fn class_matrix(&self) -> &Tensor {
        &self.class_matrix
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Head {
    Dnn(Vec<Dense>),
    Qnn(QnnHead),
}

#[derive(Debug, Clone)]
struct QnnCache {
    squashed: Vec<Vec<f64>>,
    encodings: Vec<Vec<f64>>,
    noise: Option<NoiseSpec>,
}

/// Gradients of the trainable tensors, keyed by tensor name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(pub BTreeMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().flatten().all(|v| v.is_finite())
    }
}

/// A CNN feature extractor with either a DNN or a quantum classification head.
#[derive(Debug, Clone)]
pub struct HybridModel {
    kind: ModelKind,
    config: HybridConfig,
    seed: u64,
    cnn: Cnn,
    head: Head,
    trainable: Trainable,
    qnn_cache: Option<QnnCache>,
}

fn dense_head(config: &HybridConfig, features: usize, rng: &mut ChaCha8Rng) -> Vec<Dense> {
    let mut widths = vec![features];
    widths.extend(&config.dnn_hidden);
    let last_hidden = widths.len() - 2;
    let mut layers: Vec<Dense> = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last_hidden { Activation::None } else { Activation::Relu };
            Dense::new(w[0], w[1], act, rng)
        })
        .collect();
    layers.push(Dense::new(widths[widths.len() - 1], config.n_classes, Activation::None, rng));
    layers
}

/// Seeded construction. The quantum head's class matrix is drawn once from a
/// standard normal scaled by `1/sqrt(n_wires)` and never trained.
pub fn build_model(kind: ModelKind, config: &HybridConfig, seed: u64) -> Result<HybridModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cnn = Cnn::new(&config.conv_blocks, &mut rng)?;
    let features = cnn.feature_dim();
    let head = match kind {
        ModelKind::CnnDnn => Head::Dnn(dense_head(config, features, &mut rng)),
        ModelKind::CnnQnn => {
            let n_wires = config.vqc.n_wires;
            let compressor = Dense::new(features, n_wires, Activation::None, &mut rng);
            let scale = 1.0 / (n_wires as f64).sqrt();
            let matrix = (0..n_wires * config.n_classes)
                .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect::<Vec<f64>>();
            Head::Qnn(QnnHead {
                compressor,
                params: VqcParams::init(&config.vqc, seed),
                cfg: config.vqc,
                class_matrix: Tensor::new(vec![n_wires, config.n_classes], matrix)?,
            })
        }
    };
    let mut model = HybridModel {
        kind,
        config: config.clone(),
        seed,
        cnn,
        head,
        trainable: Trainable::ALL,
        qnn_cache: None,
    };
    model.set_trainable(Trainable::ALL);
    Ok(model)
}

fn weighted_expectation(encoding: &[f64], angles: &[f64], cfg: &VqcConfig, noise: Option<&NoiseSpec>, w: &[f64]) -> f64 {
    let z = match noise {
        None => expectations_unchecked(encoding, angles, cfg),
        Some(spec) => {
            let params = VqcParams {
                n_wires: cfg.n_wires,
                n_layers: cfg.n_layers,
                angles: angles.to_vec(),
            };
            match noisy_qnn_forward_angles(encoding, &params, cfg, spec) {
                Ok(obs) => obs.0,
                Err(_) => return f64::NAN,
            }
        }
    };
    z.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn quantum_grad<F: Fn(&[f64]) -> f64>(loss: F, at: &[f64], method: GradMethod) -> Result<GradientVector> {
    match method {
        GradMethod::ParameterShift => parameter_shift_grad(loss, at),
        GradMethod::FiniteDiff { eps } => finite_diff_grad(loss, at, eps),
    }
}

impl HybridModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &HybridConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cnn(&self) -> &Cnn {
        &self.cnn
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn trainable(&self) -> Trainable {
        self.trainable
    }

    /// Applies the mask to every layer. Flags for components the model does
    /// not have are stored as given but have no effect.
    pub fn set_trainable(&mut self, mask: Trainable) {
        self.trainable = mask;
        self.cnn.set_trainable(mask.cnn);
        match &mut self.head {
            Head::Dnn(layers) => layers.iter_mut().for_each(|l| l.trainable = mask.dnn),
            Head::Qnn(q) => q.compressor.trainable = mask.compressor,
        }
    }

    /// `cnn` runs in `mode` only while trainable; a frozen extractor always
    /// uses its running statistics so they stay fixed.
    pub fn extract_features(&mut self, waveforms: &Tensor, mode: Mode) -> Result<Tensor> {
        let mode = if self.trainable.cnn { mode } else { Mode::Eval };
        self.cnn.extract(waveforms, mode)
    }

    /// Logits `[batch, n_classes]` for waveforms `[batch, 1, time]`.
    pub fn forward(&mut self, waveforms: &Tensor, mode: Mode, noise: Option<&NoiseSpec>) -> Result<Tensor> {
        if waveforms.rank() != 3 || waveforms.shape()[0] == 0 {
            return Err(Error::invalid(format!(
                "waveform batch must be [batch, 1, time] with batch > 0, got {:?}",
                waveforms.shape()
            )));
        }
        if noise.is_some() && self.kind == ModelKind::CnnDnn {
            return Err(Error::invalid("noise applies only to models with a quantum head"));
        }
        if let Some(spec) = noise {
            spec.validate()?;
        }
        let features = self.extract_features(waveforms, mode)?;
        let batch = features.shape()[0];
        match &mut self.head {
            Head::Dnn(layers) => {
                let mut x = features;
                for layer in layers.iter_mut() {
                    x = layer.forward(&x)?;
                }
                Ok(x)
            }
            Head::Qnn(q) => {
                let h = q.compressor.forward(&features)?;
                let n_wires = q.cfg.n_wires;
                let n_classes = q.class_matrix.shape()[1];
                let m = q.class_matrix.data();
                let mut logits = vec![0.0; batch * n_classes];
                let mut squashed = Vec::with_capacity(batch);
                let mut encodings = Vec::with_capacity(batch);
                for (s, row) in h.data().chunks(n_wires).enumerate() {
                    let x: Vec<f64> = row.iter().map(|v| v.tanh()).collect();
                    let enc: Vec<f64> = x.iter().map(|v| PI * v).collect();
                    let z = match noise {
                        None => expectations_unchecked(&enc, &q.params.angles, &q.cfg),
                        Some(spec) => noisy_qnn_forward_angles(&enc, &q.params, &q.cfg, spec)?.0,
                    };
                    let out = &mut logits[s * n_classes..(s + 1) * n_classes];
                    for (j, zj) in z.iter().enumerate() {
                        for (c, o) in out.iter_mut().enumerate() {
                            *o += zj * m[j * n_classes + c];
                        }
                    }
                    squashed.push(x);
                    encodings.push(enc);
                }
                self.qnn_cache = Some(QnnCache {
                    squashed,
                    encodings,
                    noise: noise.copied(),
                });
                Tensor::new(vec![batch, n_classes], logits)
            }
        }
    }

    /// Gradients of the trainable tensors given `dL/dlogits` from the latest
    /// forward pass. Quantum angles use `method`; everything classical is
    /// backpropagated analytically.
    pub fn backward(&self, grad_logits: &Tensor, method: GradMethod) -> Result<Gradients> {
        let mut grads = Gradients::default();
        let grad_features = match &self.head {
            Head::Dnn(layers) => {
                let mut g = grad_logits.clone();
                for (i, layer) in layers.iter().enumerate().rev() {
                    let (gx, pg) = layer.backward(&g)?;
                    if self.trainable.dnn {
                        grads.0.insert(format!("dnn.layer{}.weights", i + 1), pg.weights);
                        grads.0.insert(format!("dnn.layer{}.bias", i + 1), pg.bias);
                    }
                    g = gx;
                }
                self.trainable.cnn.then_some(g)
            }
            Head::Qnn(q) => {
                let cache = self
                    .qnn_cache
                    .as_ref()
                    .ok_or_else(|| Error::State("backward without a forward pass".into()))?;
                let n_wires = q.cfg.n_wires;
                let n_classes = q.class_matrix.shape()[1];
                let batch = cache.encodings.len();
                if grad_logits.shape() != [batch, n_classes] {
                    return Err(Error::invalid(format!(
                        "logit gradient shape {:?}, expected [{batch}, {n_classes}]",
                        grad_logits.shape()
                    )));
                }
                let m = q.class_matrix.data();
                let need_input = self.trainable.compressor || self.trainable.cnn;
                let mut angle_grad = vec![0.0; q.params.angles.len()];
                let mut grad_h = vec![0.0; batch * n_wires];
                for s in 0..batch {
                    let g = &grad_logits.data()[s * n_classes..(s + 1) * n_classes];
                    let w: Vec<f64> = (0..n_wires)
                        .map(|j| (0..n_classes).map(|c| m[j * n_classes + c] * g[c]).sum())
                        .collect();
                    let enc = &cache.encodings[s];
                    let noise = cache.noise.as_ref();
                    if self.trainable.vqc {
                        let gv = quantum_grad(
                            |a| weighted_expectation(enc, a, &q.cfg, noise, &w),
                            &q.params.angles,
                            method,
                        )?;
                        angle_grad.iter_mut().zip(gv.0).for_each(|(a, b)| *a += b);
                    }
                    if need_input {
                        let ge = quantum_grad(
                            |e| weighted_expectation(e, &q.params.angles, &q.cfg, noise, &w),
                            enc,
                            method,
                        )?;
                        for (j, (dx, x)) in ge.0.iter().zip(&cache.squashed[s]).enumerate() {
                            grad_h[s * n_wires + j] = PI * dx * (1.0 - x * x);
                        }
                    }
                }
                if self.trainable.vqc {
                    grads.0.insert("qnn.vqc.angles".into(), angle_grad);
                }
                if need_input {
                    let (gx, pg) = q.compressor.backward(&Tensor::new(vec![batch, n_wires], grad_h)?)?;
                    if self.trainable.compressor {
                        grads.0.insert("qnn.compressor.weights".into(), pg.weights);
                        grads.0.insert("qnn.compressor.bias".into(), pg.bias);
                    }
                    self.trainable.cnn.then_some(gx)
                } else {
                    None
                }
            }
        };
        if let Some(g) = grad_features {
            let (_, block_grads) = self.cnn.backward(&g)?;
            for (i, bg) in block_grads.into_iter().enumerate() {
                let p = format!("cnn.block{}", i + 1);
                grads.0.insert(format!("{p}.weights"), bg.weights);
                grads.0.insert(format!("{p}.bias"), bg.bias);
                grads.0.insert(format!("{p}.bn_gamma"), bg.bn_gamma);
                grads.0.insert(format!("{p}.bn_beta"), bg.bn_beta);
            }
        }
        Ok(grads)
    }

    /// Mean cross-entropy over the batch and its gradients.
    pub fn loss_and_grads(
        &mut self,
        waveforms: &Tensor,
        labels: &[usize],
        mode: Mode,
        noise: Option<&NoiseSpec>,
        method: GradMethod,
    ) -> Result<(f64, Gradients)> {
        let logits = self.forward(waveforms, mode, noise)?;
        let (loss, grad) = batch_ce(&logits, labels)?;
        Ok((loss, self.backward(&grad, method)?))
    }

    pub fn clear_cache(&mut self) {
        self.cnn.clear_cache();
        match &mut self.head {
            Head::Dnn(layers) => layers.iter_mut().for_each(Dense::clear_cache),
            Head::Qnn(q) => q.compressor.clear_cache(),
        }
        self.qnn_cache = None;
    }

    /// Every stored tensor with its name, shape and whether the optimizer may
    /// change it. Running statistics and the class matrix are never trainable.
    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let t = self.trainable;
        let mut out = Vec::new();
        for (i, b) in self.cnn.blocks.iter().enumerate() {
            let p = format!("cnn.block{}", i + 1);
            out.push(NamedTensor::new(format!("{p}.weights"), &b.weights, t.cnn, false));
            out.push(NamedTensor::new(format!("{p}.bias"), &b.bias, t.cnn, false));
            out.push(NamedTensor::new(format!("{p}.bn_gamma"), &b.bn_gamma, t.cnn, false));
            out.push(NamedTensor::new(format!("{p}.bn_beta"), &b.bn_beta, t.cnn, false));
            out.push(NamedTensor::buffer(format!("{p}.bn_running_mean"), &b.bn_running_mean));
            out.push(NamedTensor::buffer(format!("{p}.bn_running_var"), &b.bn_running_var));
        }
        match &self.head {
            Head::Dnn(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    out.push(NamedTensor::new(format!("dnn.layer{}.weights", i + 1), &l.weights, t.dnn, false));
                    out.push(NamedTensor::new(format!("dnn.layer{}.bias", i + 1), &l.bias, t.dnn, false));
                }
            }
            Head::Qnn(q) => {
                let c = &q.compressor;
                out.push(NamedTensor::new("qnn.compressor.weights".into(), &c.weights, t.compressor, false));
                out.push(NamedTensor::new("qnn.compressor.bias".into(), &c.bias, t.compressor, false));
                out.push(NamedTensor {
                    name: "qnn.vqc.angles".into(),
                    shape: vec![q.cfg.n_layers, q.cfg.n_wires, crate::vqc::ANGLES_PER_WIRE],
                    data: &q.params.angles,
                    trainable: t.vqc,
                    quantum: true,
                    counted: true,
                });
                let mut m = NamedTensor::new("qnn.class_matrix".into(), &q.class_matrix, false, false);
                m.counted = true;
                out.push(m);
            }
        }
        out
    }

    /// Mutable views in the same order as [`HybridModel::named_tensors`].
    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, b) in self.cnn.blocks.iter_mut().enumerate() {
            let p = format!("cnn.block{}", i + 1);
            out.push((format!("{p}.weights"), b.weights.data_mut()));
            out.push((format!("{p}.bias"), b.bias.data_mut()));
            out.push((format!("{p}.bn_gamma"), b.bn_gamma.data_mut()));
            out.push((format!("{p}.bn_beta"), b.bn_beta.data_mut()));
            out.push((format!("{p}.bn_running_mean"), b.bn_running_mean.data_mut()));
            out.push((format!("{p}.bn_running_var"), b.bn_running_var.data_mut()));
        }
        match &mut self.head {
            Head::Dnn(layers) => {
                for (i, l) in layers.iter_mut().enumerate() {
                    out.push((format!("dnn.layer{}.weights", i + 1), l.weights.data_mut()));
                    out.push((format!("dnn.layer{}.bias", i + 1), l.bias.data_mut()));
                }
            }
            Head::Qnn(q) => {
                out.push(("qnn.compressor.weights".into(), q.compressor.weights.data_mut()));
                out.push(("qnn.compressor.bias".into(), q.compressor.bias.data_mut()));
                out.push(("qnn.vqc.angles".into(), &mut q.params.angles));
                out.push(("qnn.class_matrix".into(), q.class_matrix.data_mut()));
            }
        }
        out
    }

    pub fn vqc_param_count(&self) -> usize {
        match &self.head {
            Head::Qnn(q) => param_count(&q.cfg),
            Head::Dnn(_) => 0,
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        self.named_tensors().iter().filter(|t| t.trainable).map(|t| t.data.len()).sum()
    }

    /// Parameters excluding batch-norm running statistics. The fixed class
    /// matrix is included.
    pub fn total_param_count(&self) -> usize {
        self.named_tensors().iter().filter(|t| t.counted).map(|t| t.data.len()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
    pub trainable: bool,
    /// VQC angles, which take the quantum learning rate.
    pub quantum: bool,
    /// Counted in [`HybridModel::total_param_count`].
    pub counted: bool,
}

impl<'a> NamedTensor<'a> {
    fn new(name: String, t: &'a Tensor, trainable: bool, quantum: bool) -> Self {
        NamedTensor {
            name,
            shape: t.shape().to_vec(),
            data: t.data(),
            trainable,
            quantum,
            counted: true,
        }
    }

    fn buffer(name: String, t: &'a Tensor) -> Self {
        NamedTensor {
            counted: false,
            ..NamedTensor::new(name, t, false, false)
        }
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn batch_ce(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::invalid(format!("{} labels for a batch of {batch}", labels.len())));
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks(classes).zip(labels) {
        let (l, g) = softmax_ce(row, label)?;
        total += l;
        grad.extend(g.into_iter().map(|v| v / batch as f64));
    }
    Ok((total / batch as f64, Tensor::new(vec![batch, classes], grad)?))
}

/// Builds a quantum-head model whose CNN is a copy of `source`'s. The dense
/// compressor, circuit angles and class matrix are freshly drawn from `seed`.
pub fn transfer_cnn(source: &HybridModel, vqc: VqcConfig, regime: super::TrainRegime, seed: u64) -> Result<HybridModel> {
    if source.kind != ModelKind::CnnDnn {
        return Err(Error::invalid("the transfer source must be a CNN-DNN model"));
    }
    let trainable = match regime {
        super::TrainRegime::CnnQnn2 => Trainable {
            cnn: false,
            dnn: false,
            compressor: false,
            vqc: true,
        },
        super::TrainRegime::CnnQnn3 => Trainable::ALL,
        other => {
            return Err(Error::invalid(format!(
                "regime {} does not start from a transferred CNN",
                other.name()
            )))
        }
    };
    let mut config = source.config.clone();
    config.vqc = vqc;
    let mut target = build_model(ModelKind::CnnQnn, &config, seed)?;
    if target.cnn.configs() != source.cnn.configs() {
        return Err(Error::invalid("source and target CNN configurations differ"));
    }
    target.cnn = source.cnn.clone();
    target.cnn.clear_cache();
    target.set_trainable(trainable);
    Ok(target)
}
