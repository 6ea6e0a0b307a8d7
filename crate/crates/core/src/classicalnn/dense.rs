use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_fan_in, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Tensor,
    output: Vec<f64>,
}

/// Fully connected layer `y = W x + b` with optional ReLU.
#[derive(Debug, Clone)]
pub struct Dense {
    /// `[out, in]`
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    pub trainable: bool,
    cache: Option<DenseCache>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Dense {
            weights: uniform_fan_in(rng, vec![outputs, inputs], inputs),
            bias: uniform_fan_in(rng, vec![outputs], inputs),
            activation,
            trainable: true,
            cache: None,
        }
    }

    pub fn from_params(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        weights.expect_rank(2, "dense weights")?;
        if bias.shape() != [weights.shape()[0]] {
            return Err(Error::invalid(format!(
                "bias shape {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            )));
        }
        Ok(Dense {
            weights,
            bias,
            activation,
            trainable: true,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `x` is `[batch, in]`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        x.expect_rank(2, "dense layer")?;
        let (batch, n_in) = (x.shape()[0], x.shape()[1]);
        if n_in != self.inputs() {
            return Err(Error::invalid(format!(
                "dense layer expects {} inputs, got {n_in}",
                self.inputs()
            )));
        }
        let n_out = self.outputs();
        let w = self.weights.data();
        let mut out = vec![0.0; batch * n_out];
        for b in 0..batch {
            let xr = &x.data()[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                let mut v = self.bias.data()[o] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
                if self.activation == Activation::Relu {
                    v = v.max(0.0);
                }
                out[b * n_out + o] = v;
            }
        }
        self.cache = Some(DenseCache {
            input: x.clone(),
            output: out.clone(),
        });
        Tensor::new(vec![batch, n_out], out)
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<(Tensor, DenseGrads)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("dense backward without a forward pass".into()))?;
        let (batch, n_in) = (cache.input.shape()[0], cache.input.shape()[1]);
        let n_out = self.outputs();
        if grad_out.shape() != [batch, n_out] {
            return Err(Error::invalid(format!(
                "dense gradient shape {:?}, expected [{batch}, {n_out}]",
                grad_out.shape()
            )));
        }
        let mut g = grad_out.data().to_vec();
        if self.activation == Activation::Relu {
            for (gv, &y) in g.iter_mut().zip(&cache.output) {
                if y <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        let w = self.weights.data();
        let x = cache.input.data();
        let mut dx = vec![0.0; batch * n_in];
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; n_out];
        for b in 0..batch {
            let xr = &x[b * n_in..(b + 1) * n_in];
            let dxr = &mut dx[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let go = g[b * n_out + o];
                if go == 0.0 {
                    continue;
                }
                let wr = &w[o * n_in..(o + 1) * n_in];
                for (d, wv) in dxr.iter_mut().zip(wr) {
                    *d += go * wv;
                }
                if self.trainable {
                    db[o] += go;
                    for (d, xv) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(xr) {
                        *d += go * xv;
                    }
                }
            }
        }
        Ok((
            Tensor::new(vec![batch, n_in], dx)?,
            DenseGrads {
                weights: dw,
                bias: db,
            },
        ))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
