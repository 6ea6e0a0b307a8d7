//! Minimal 1D CNN / dense stack with hand-written backpropagation.

mod conv;
mod dense;
mod loss;
mod tensor;

pub use conv::{ConvBlock, ConvBlockConfig, ConvGrads};
pub use dense::{Activation, Dense, DenseGrads};
pub use loss::{argmax, softmax_ce};
pub use tensor::Tensor;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in<R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches generated data")
}

/// Four blocks: 1-32-64-64-64 channels, kernel/stride 80/16 then 3/1, pool 4.
pub fn default_conv_configs() -> Vec<ConvBlockConfig> {
    let block = |in_channels, out_channels, kernel, stride| ConvBlockConfig {
        in_channels,
        out_channels,
        kernel,
        stride,
        pool: 4,
    };
    vec![
        block(1, 32, 80, 16),
        block(32, 64, 3, 1),
        block(64, 64, 3, 1),
        block(64, 64, 3, 1),
    ]
}

/// Stacked conv blocks followed by global average pooling over time.
#[derive(Debug, Clone)]
pub struct Cnn {
    pub blocks: Vec<ConvBlock>,
    pooled_len: Option<usize>,
}

impl Cnn {
    pub fn new<R: Rng>(configs: &[ConvBlockConfig], rng: &mut R) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::invalid("a CNN needs at least one block"));
        }
        for pair in configs.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::invalid(format!(
                    "block channels do not chain: {} -> {}",
                    pair[0].out_channels, pair[1].in_channels
                )));
            }
        }
        let blocks = configs
            .iter()
            .map(|&c| ConvBlock::new(c, rng))
            .collect::<Result<_>>()?;
        Ok(Cnn {
            blocks,
            pooled_len: None,
        })
    }

    pub fn configs(&self) -> Vec<ConvBlockConfig> {
        self.blocks.iter().map(|b| b.cfg).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.cfg.out_channels)
    }

    /// Per-block output lengths for an input of `time` samples.
    pub fn time_lengths(&self, time: usize) -> Result<Vec<usize>> {
        let mut t = time;
        self.blocks
            .iter()
            .map(|b| {
                t = b.cfg.output_len(t)?;
                Ok(t)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.cfg.param_count()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.blocks.iter_mut().for_each(|b| b.trainable = trainable);
    }

    pub fn is_trainable(&self) -> bool {
        self.blocks.iter().any(|b| b.trainable)
    }

    /// `waveforms` is `[batch, 1, time]`; returns `[batch, feature_dim]`.
    pub fn extract(&mut self, waveforms: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = waveforms.clone();
        for block in &mut self.blocks {
            x = block.forward(&x, mode)?;
        }
        let (batch, channels, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let features = x
            .data()
            .chunks(time)
            .map(|row| row.iter().sum::<f64>() / time as f64)
            .collect();
        self.pooled_len = Some(time);
        Tensor::new(vec![batch, channels], features)
    }

    pub fn backward(&self, grad: &Tensor) -> Result<(Tensor, Vec<ConvGrads>)> {
        let time = self
            .pooled_len
            .ok_or_else(|| Error::State("CNN backward without a forward pass".into()))?;
        let (batch, channels) = (grad.shape()[0], grad.shape()[1]);
        let spread = grad
            .data()
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / time as f64, time))
            .collect();
        let mut g = Tensor::new(vec![batch, channels, time], spread)?;
        let mut grads = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter().rev() {
            let (gx, pg) = block.backward(&g)?;
            grads.push(pg);
            g = gx;
        }
        grads.reverse();
        Ok((g, grads))
    }

    pub fn clear_cache(&mut self) {
        self.blocks.iter_mut().for_each(ConvBlock::clear_cache);
        self.pooled_len = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradopt::relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_tensor(r: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn identity_block() -> ConvBlock {
        let cfg = ConvBlockConfig {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            pool: 1,
        };
        let mut b = ConvBlock::new(cfg, &mut rng(0)).unwrap();
        b.weights = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        b.bias = Tensor::zeros(vec![1]);
        b
    }

    #[test]
    fn identity_block_is_relu() {
        let mut b = identity_block();
        let x = Tensor::new(vec![1, 1, 5], vec![-1.0, 0.5, 2.0, -0.1, 0.0]).unwrap();
        let y = b.forward(&x, Mode::Eval).unwrap();
        let expected: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
        for (a, e) in y.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }

        let neg = Tensor::new(vec![1, 1, 4], vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
        assert!(b.forward(&neg, Mode::Eval).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn length_arithmetic() {
        let cfgs = default_conv_configs();
        assert_eq!(cfgs[0].conv_len(8000).unwrap(), 496);
        assert_eq!(cfgs[0].output_len(8000).unwrap(), 124);
        let cnn = Cnn::new(&cfgs, &mut rng(1)).unwrap();
        assert_eq!(cnn.time_lengths(8000).unwrap(), vec![124, 30, 7, 1]);
        assert_eq!(cnn.feature_dim(), 64);
        assert!(cfgs[0].conv_len(79).is_err());
        // half-second clips: the last block pools a single step
        assert_eq!(cnn.time_lengths(4000).unwrap(), vec![61, 14, 3, 1]);
    }

    #[test]
    fn extract_shapes_and_zero_input() {
        let mut cnn = Cnn::new(&default_conv_configs(), &mut rng(2)).unwrap();
        for b in &mut cnn.blocks {
            b.bias = Tensor::zeros(b.bias.shape().to_vec());
        }
        let zeros = Tensor::zeros(vec![2, 1, 8000]);
        let f = cnn.extract(&zeros, Mode::Eval).unwrap();
        assert_eq!(f.shape(), &[2, 64]);
        assert!(f.data().iter().all(|&v| v == 0.0));

        let mut r = rng(3);
        let one = random_tensor(&mut r, vec![1, 1, 8000]);
        let mut twice = one.data().to_vec();
        twice.extend_from_slice(one.data());
        let f = cnn
            .extract(&Tensor::new(vec![2, 1, 8000], twice).unwrap(), Mode::Eval)
            .unwrap();
        assert_eq!(f.data()[..64], f.data()[64..]);
    }

    #[test]
    fn dense_examples() {
        let mut eye = Dense::from_params(
            Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![3]),
            Activation::None,
        )
        .unwrap();
        let x = Tensor::new(vec![1, 3], vec![0.3, -2.0, 7.0]).unwrap();
        assert_eq!(eye.forward(&x).unwrap().data(), x.data());

        let mut l = Dense::from_params(
            Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
            Tensor::new(vec![1], vec![-3.0]).unwrap(),
            Activation::Relu,
        )
        .unwrap();
        let y = l.forward(&Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0]);
        // the unit is off, so nothing flows back
        let (gx, gp) = l.backward(&Tensor::filled(vec![1, 1], 1.0)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.weights.iter().all(|&v| v == 0.0));

        let mut wide = Dense::new(64, 128, Activation::Relu, &mut rng(4));
        let y = wide.forward(&Tensor::zeros(vec![1, 64])).unwrap();
        assert_eq!(y.shape(), &[1, 128]);
        assert!(wide.forward(&Tensor::zeros(vec![1, 63])).is_err());
    }

    #[test]
    fn dense_sum_loss_gradient() {
        let mut r = rng(5);
        let mut l = Dense::new(4, 3, Activation::None, &mut r);
        let x = random_tensor(&mut r, vec![1, 4]);
        l.forward(&x).unwrap();
        let (_, g) = l.backward(&Tensor::filled(vec![1, 3], 1.0)).unwrap();
        // dL/dW = outer(ones, x)
        for o in 0..3 {
            for i in 0..4 {
                assert_eq!(g.weights[o * 4 + i], x.data()[i]);
            }
        }
        assert_eq!(g.bias, vec![1.0; 3]);
    }

    #[test]
    fn backward_needs_forward() {
        let l = Dense::new(2, 2, Activation::None, &mut rng(6));
        assert!(matches!(l.backward(&Tensor::zeros(vec![1, 2])), Err(Error::State(_))));
        let b = identity_block();
        assert!(matches!(b.backward(&Tensor::zeros(vec![1, 1, 1])), Err(Error::State(_))));
        let cnn = Cnn::new(&default_conv_configs(), &mut rng(6)).unwrap();
        assert!(matches!(cnn.backward(&Tensor::zeros(vec![1, 64])), Err(Error::State(_))));
    }

    #[test]
    fn frozen_layers_report_zero_param_grads() {
        let mut r = rng(7);
        let mut l = Dense::new(3, 2, Activation::None, &mut r);
        l.trainable = false;
        l.forward(&random_tensor(&mut r, vec![2, 3])).unwrap();
        let (gx, gp) = l.backward(&Tensor::filled(vec![2, 2], 1.0)).unwrap();
        assert!(gp.weights.iter().chain(&gp.bias).all(|&v| v == 0.0));
        assert!(gx.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn softmax_ce_examples() {
        let (loss, grad) = softmax_ce(&[0.7; 35], 12).unwrap();
        assert!((loss - 35f64.ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);

        let mut logits = vec![0.0; 35];
        logits[3] = 50.0;
        let (loss, grad) = softmax_ce(&logits, 3).unwrap();
        assert!(loss < 1e-20);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);

        assert!(matches!(softmax_ce(&[0.0; 35], 35), Err(Error::InvalidArgument(_))));
        assert!(softmax_ce(&[f64::NAN, 0.0], 0).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let cfg = ConvBlockConfig {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            stride: 1,
            pool: 1,
        };
        let mut r = rng(8);
        let mut b = ConvBlock::new(cfg, &mut r).unwrap();
        // beta large enough that ReLU never clips, so the output is gamma * xhat + beta
        b.bn_beta = Tensor::filled(vec![3], 100.0);
        let mut x = random_tensor(&mut r, vec![4, 2, 30]);
        // keep the batch variance well above BN_EPS
        x.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        let y = b.forward(&x, Mode::Train).unwrap();
        let t = y.shape()[2];
        for o in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|bi| y.data()[(bi * 3 + o) * t..(bi * 3 + o + 1) * t].to_vec())
                .map(|v| v - 100.0)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        assert!(b.bn_running_mean.data().iter().any(|&v| v != 0.0));
    }

    /// Central-difference check of `loss = sum(r * layer(x))` for the input and
    /// every parameter.
    fn check_conv(cfg: ConvBlockConfig, mode: Mode, time: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut block = ConvBlock::new(cfg, &mut r).unwrap();
        block.bn_gamma = random_tensor(&mut r, vec![cfg.out_channels]);
        block.bn_beta = random_tensor(&mut r, vec![cfg.out_channels]);
        block.bn_running_mean = random_tensor(&mut r, vec![cfg.out_channels]);
        block.bn_running_var = Tensor::filled(vec![cfg.out_channels], 0.7);
        let x = random_tensor(&mut r, vec![3, cfg.in_channels, time]);
        let y = block.forward(&x, mode).unwrap();
        let proj = random_tensor(&mut r, y.shape().to_vec());
        let (gx, gp) = block.backward(&proj).unwrap();

        let loss = |blk: &ConvBlock, x: &Tensor| {
            let mut b = blk.clone();
            let y = b.forward(x, mode).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, c)| a * c).sum::<f64>()
        };
        let eps = 1e-4;
        let mut worst = 0.0f64;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (loss(&block, &xp) - loss(&block, &xm)) / (2.0 * eps);
            worst = worst.max(relative_error(gx.data()[i], fd, 1e-6));
        }
        type Slot = fn(&mut ConvBlock) -> &mut Tensor;
        let params: [(Slot, &Vec<f64>); 4] = [
            (|b| &mut b.weights, &gp.weights),
            (|b| &mut b.bias, &gp.bias),
            (|b| &mut b.bn_gamma, &gp.bn_gamma),
            (|b| &mut b.bn_beta, &gp.bn_beta),
        ];
        for (get, analytic) in params {
            for (i, a) in analytic.iter().enumerate() {
                let (mut bp, mut bm) = (block.clone(), block.clone());
                get(&mut bp).data_mut()[i] += eps;
                get(&mut bm).data_mut()[i] -= eps;
                let fd = (loss(&bp, &x) - loss(&bm, &x)) / (2.0 * eps);
                worst = worst.max(relative_error(*a, fd, 1e-6));
            }
        }
        worst
    }

    #[test]
    fn conv_gradient_check() {
        let cfg = ConvBlockConfig {
            in_channels: 2,
            out_channels: 3,
            kernel: 4,
            stride: 2,
            pool: 2,
        };
        for (seed, mode) in [(10, Mode::Train), (11, Mode::Eval), (12, Mode::Train)] {
            let err = check_conv(cfg, mode, 21, seed);
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
        let short_pool = ConvBlockConfig { pool: 8, ..cfg };
        assert!(check_conv(short_pool, Mode::Train, 9, 13) < 1e-5);
    }

    #[test]
    fn dense_gradient_check() {
        for act in [Activation::Relu, Activation::None] {
            let mut r = rng(20);
            let mut l = Dense::new(5, 4, act, &mut r);
            let x = random_tensor(&mut r, vec![3, 5]);
            let y = l.forward(&x).unwrap();
            let proj = random_tensor(&mut r, y.shape().to_vec());
            let (gx, gp) = l.backward(&proj).unwrap();
            let loss = |layer: &Dense, x: &Tensor| {
                let mut c = layer.clone();
                c.forward(x).unwrap().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
            };
            let eps = 1e-4;
            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[i] += eps;
                xm.data_mut()[i] -= eps;
                let fd = (loss(&l, &xp) - loss(&l, &xm)) / (2.0 * eps);
                assert!(relative_error(gx.data()[i], fd, 1e-6) < 1e-5);
            }
            for i in 0..gp.weights.len() {
                let (mut lp, mut lm) = (l.clone(), l.clone());
                lp.weights.data_mut()[i] += eps;
                lm.weights.data_mut()[i] -= eps;
                let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * eps);
                assert!(relative_error(gp.weights[i], fd, 1e-6) < 1e-5);
            }
        }
    }

    #[test]
    fn softmax_ce_gradient_check() {
        let mut r = rng(30);
        let logits: Vec<f64> = (0..7).map(|_| r.random_range(-3.0..3.0)).collect();
        let (_, grad) = softmax_ce(&logits, 4).unwrap();
        let eps = 1e-4;
        for i in 0..7 {
            let (mut p, mut m) = (logits.clone(), logits.clone());
            p[i] += eps;
            m[i] -= eps;
            let fd = (softmax_ce(&p, 4).unwrap().0 - softmax_ce(&m, 4).unwrap().0) / (2.0 * eps);
            assert!(relative_error(grad[i], fd, 1e-6) < 1e-5);
        }
    }

    #[test]
    fn cnn_gradient_check() {
        let cfgs = [
            ConvBlockConfig { in_channels: 1, out_channels: 3, kernel: 5, stride: 2, pool: 2 },
            ConvBlockConfig { in_channels: 3, out_channels: 2, kernel: 3, stride: 1, pool: 2 },
        ];
        let mut r = rng(40);
        let mut cnn = Cnn::new(&cfgs, &mut r).unwrap();
        let x = random_tensor(&mut r, vec![2, 1, 40]);
        let f = cnn.extract(&x, Mode::Train).unwrap();
        let proj = random_tensor(&mut r, f.shape().to_vec());
        let (gx, _) = cnn.backward(&proj).unwrap();
        let loss = |x: &Tensor| {
            let mut c = cnn.clone();
            c.extract(x, Mode::Train).unwrap().data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let eps = 1e-4;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += eps;
            xm.data_mut()[i] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps);
            assert!(relative_error(gx.data()[i], fd, 1e-6) < 1e-5, "{i}: {} vs {fd}", gx.data()[i]);
        }
    }
}
