use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_fan_in, Mode, Tensor, BN_EPS, BN_MOMENTUM};
use crate::error::{Error, Result};

/// Conv1D -> BatchNorm -> ReLU -> MaxPool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
}

impl ConvBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.kernel == 0
            || self.stride == 0
            || self.pool == 0
        {
            return Err(Error::invalid(format!("degenerate conv block {self:?}")));
        }
        Ok(())
    }

    /// Length after the valid, strided convolution.
    pub fn conv_len(&self, time: usize) -> Result<usize> {
        if time < self.kernel {
            return Err(Error::invalid(format!(
                "time length {time} is shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((time - self.kernel) / self.stride + 1)
    }

    /// Length after pooling. Non-overlapping windows drop the remainder; a
    /// sequence shorter than one window pools to a single value.
    pub fn output_len(&self, time: usize) -> Result<usize> {
        let conv = self.conv_len(time)?;
        Ok(pooled_len(conv, self.pool))
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel + 3 * self.out_channels
    }
}

fn pooled_len(conv: usize, pool: usize) -> usize {
    if conv >= pool {
        conv / pool
    } else {
        1
    }
}

#[derive(Debug, Clone)]
struct ConvCache {
    input: Tensor,
    normalized: Vec<f64>,
    activated: Vec<f64>,
    inv_std: Vec<f64>,
    argmax: Vec<usize>,
    conv_len: usize,
    mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn_gamma: Vec<f64>,
    pub bn_beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub cfg: ConvBlockConfig,
    /// `[out_channels, in_channels, kernel]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub bn_gamma: Tensor,
    pub bn_beta: Tensor,
    pub bn_running_mean: Tensor,
    pub bn_running_var: Tensor,
    pub trainable: bool,
    cache: Option<ConvCache>,
}

impl ConvBlock {
    pub fn new<R: Rng>(cfg: ConvBlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let fan_in = cfg.in_channels * cfg.kernel;
        let c = cfg.out_channels;
        Ok(ConvBlock {
            cfg,
            weights: uniform_fan_in(rng, vec![c, cfg.in_channels, cfg.kernel], fan_in),
            bias: uniform_fan_in(rng, vec![c], fan_in),
            bn_gamma: Tensor::filled(vec![c], 1.0),
            bn_beta: Tensor::zeros(vec![c]),
            bn_running_mean: Tensor::zeros(vec![c]),
            bn_running_var: Tensor::filled(vec![c], 1.0),
            trainable: true,
            cache: None,
        })
    }

    /// `x` is `[batch, in_channels, time]`; returns `[batch, out_channels, pooled]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        x.expect_rank(3, "conv block")?;
        let (batch, cin, time) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let cfg = self.cfg;
        if cin != cfg.in_channels {
            return Err(Error::invalid(format!(
                "conv block expects {} input channels, got {cin}",
                cfg.in_channels
            )));
        }
        let conv_len = cfg.conv_len(time)?;
        let cout = cfg.out_channels;
        let (k, s) = (cfg.kernel, cfg.stride);
        let w = self.weights.data();
        let xd = x.data();

        let mut conv = vec![0.0; batch * cout * conv_len];
        for b in 0..batch {
            for o in 0..cout {
                let bias = self.bias.data()[o];
                let out = &mut conv[(b * cout + o) * conv_len..(b * cout + o + 1) * conv_len];
                out.iter_mut().for_each(|v| *v = bias);
                for i in 0..cin {
                    let xrow = &xd[(b * cin + i) * time..(b * cin + i + 1) * time];
                    let wrow = &w[(o * cin + i) * k..(o * cin + i + 1) * k];
                    for (t, v) in out.iter_mut().enumerate() {
                        let window = &xrow[t * s..t * s + k];
                        *v += window.iter().zip(wrow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
        }

        let n = (batch * conv_len) as f64;
        let mut mean = vec![0.0; cout];
        let mut var = vec![0.0; cout];
        match mode {
            Mode::Train => {
                for o in 0..cout {
                    let mut sum = 0.0;
                    for b in 0..batch {
                        sum += conv[(b * cout + o) * conv_len..(b * cout + o + 1) * conv_len]
                            .iter()
                            .sum::<f64>();
                    }
                    mean[o] = sum / n;
                    let mut sq = 0.0;
                    for b in 0..batch {
                        sq += conv[(b * cout + o) * conv_len..(b * cout + o + 1) * conv_len]
                            .iter()
                            .map(|v| (v - mean[o]).powi(2))
                            .sum::<f64>();
                    }
                    var[o] = sq / n;
                }
                if self.trainable {
                    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                    let rm = self.bn_running_mean.data_mut();
                    for o in 0..cout {
                        rm[o] = (1.0 - BN_MOMENTUM) * rm[o] + BN_MOMENTUM * mean[o];
                    }
                    let rv = self.bn_running_var.data_mut();
                    for o in 0..cout {
                        rv[o] = (1.0 - BN_MOMENTUM) * rv[o] + BN_MOMENTUM * var[o] * unbiased;
                    }
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(self.bn_running_mean.data());
                var.copy_from_slice(self.bn_running_var.data());
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut normalized = conv;
        let mut activated = vec![0.0; normalized.len()];
        let (gamma, beta) = (self.bn_gamma.data(), self.bn_beta.data());
        for b in 0..batch {
            for o in 0..cout {
                let base = (b * cout + o) * conv_len;
                for t in 0..conv_len {
                    let xh = (normalized[base + t] - mean[o]) * inv_std[o];
                    normalized[base + t] = xh;
                    activated[base + t] = (gamma[o] * xh + beta[o]).max(0.0);
                }
            }
        }

        let pool = cfg.pool;
        let out_len = pooled_len(conv_len, pool);
        let window = pool.min(conv_len);
        let mut out = vec![0.0; batch * cout * out_len];
        let mut argmax = vec![0; out.len()];
        for row in 0..batch * cout {
            for p in 0..out_len {
                let start = row * conv_len + p * pool;
                let mut best = start;
                for idx in start + 1..start + window {
                    if activated[idx] > activated[best] {
                        best = idx;
                    }
                }
                out[row * out_len + p] = activated[best];
                argmax[row * out_len + p] = best;
            }
        }

        self.cache = Some(ConvCache {
            input: x.clone(),
            normalized,
            activated,
            inv_std,
            argmax,
            conv_len,
            mode,
        });
        Tensor::new(vec![batch, cout, out_len], out)
    }

    /// Gradients of the last forward pass. Parameter gradients are zero when
    /// the block is frozen; the input gradient is always computed.
    pub fn backward(&self, grad_out: &Tensor) -> Result<(Tensor, ConvGrads)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("conv block backward without a forward pass".into()))?;
        let cfg = self.cfg;
        let (batch, cin, time) = (
            cache.input.shape()[0],
            cache.input.shape()[1],
            cache.input.shape()[2],
        );
        let cout = cfg.out_channels;
        let conv_len = cache.conv_len;
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::invalid("conv block gradient does not match its output"));
        }

        // unpool + ReLU
        let mut g = vec![0.0; batch * cout * conv_len];
        for (go, &idx) in grad_out.data().iter().zip(&cache.argmax) {
            if cache.activated[idx] > 0.0 {
                g[idx] += go;
            }
        }

        let gamma = self.bn_gamma.data();
        let mut d_gamma = vec![0.0; cout];
        let mut d_beta = vec![0.0; cout];
        for b in 0..batch {
            for o in 0..cout {
                let base = (b * cout + o) * conv_len;
                for t in 0..conv_len {
                    d_gamma[o] += g[base + t] * cache.normalized[base + t];
                    d_beta[o] += g[base + t];
                }
            }
        }

        // BN backward into the conv output
        let n = (batch * conv_len) as f64;
        let mut dy = g;
        for o in 0..cout {
            let scale = gamma[o] * cache.inv_std[o];
            match cache.mode {
                Mode::Train => {
                    // sum(dxhat) = gamma * d_beta, sum(dxhat * xhat) = gamma * d_gamma
                    let mean_dx = d_beta[o] / n;
                    let mean_dx_xhat = d_gamma[o] / n;
                    for b in 0..batch {
                        let base = (b * cout + o) * conv_len;
                        for t in 0..conv_len {
                            let xh = cache.normalized[base + t];
                            dy[base + t] = scale * (dy[base + t] - mean_dx - xh * mean_dx_xhat);
                        }
                    }
                }
                Mode::Eval => {
                    for b in 0..batch {
                        let base = (b * cout + o) * conv_len;
                        dy[base..base + conv_len].iter_mut().for_each(|v| *v *= scale);
                    }
                }
            }
        }

        let (k, s) = (cfg.kernel, cfg.stride);
        let xd = cache.input.data();
        let w = self.weights.data();
        let mut dx = vec![0.0; xd.len()];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; cout];
        for b in 0..batch {
            for o in 0..cout {
                let drow = &dy[(b * cout + o) * conv_len..(b * cout + o + 1) * conv_len];
                if self.trainable {
                    db[o] += drow.iter().sum::<f64>();
                }
                for i in 0..cin {
                    let xoff = (b * cin + i) * time;
                    let woff = (o * cin + i) * k;
                    for (t, &d) in drow.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let start = xoff + t * s;
                        for j in 0..k {
                            dx[start + j] += d * w[woff + j];
                        }
                        if self.trainable {
                            for j in 0..k {
                                dw[woff + j] += d * xd[start + j];
                            }
                        }
                    }
                }
            }
        }

        if !self.trainable {
            d_gamma.iter_mut().for_each(|v| *v = 0.0);
            d_beta.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok((
            Tensor::new(cache.input.shape().to_vec(), dx)?,
            ConvGrads {
                weights: dw,
                bias: db,
                bn_gamma: d_gamma,
                bn_beta: d_beta,
            },
        ))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
