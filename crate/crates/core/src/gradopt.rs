//! Gradient estimation for circuit parameters and first-order optimizers.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_FD_EPS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

fn probe<F>(loss_at: &F, params: &mut [f64], index: usize, shift: f64) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let original = params[index];
    params[index] = original + shift;
    let plus = loss_at(params);
    params[index] = original - shift;
    let minus = loss_at(params);
    params[index] = original;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::numeric(format!("loss probe for parameter {index}")));
    }
    Ok((plus, minus))
}

/// Central differences: `(L(t_i + eps) - L(t_i - eps)) / (2 eps)`, two loss
/// evaluations per parameter.
pub fn finite_diff_grad<F>(loss_at: F, params: &[f64], eps: f64) -> Result<GradientVector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step {eps} must be positive")));
    }
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| probe(&loss_at, &mut work, i, eps).map(|(p, m)| (p - m) / (2.0 * eps)))
        .collect::<Result<_>>()
        .map(GradientVector)
}

/// Exact gradient for parameters that enter only as Pauli-rotation angles:
/// `(L(t_i + pi/2) - L(t_i - pi/2)) / 2`.
pub fn parameter_shift_grad<F>(loss_at: F, params: &[f64]) -> Result<GradientVector>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    (0..params.len())
        .map(|i| probe(&loss_at, &mut work, i, FRAC_PI_2).map(|(p, m)| (p - m) / 2.0))
        .collect::<Result<_>>()
        .map(GradientVector)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate, 0)
    }

    pub fn adam(learning_rate: f64, n_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate, n_params)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {learning_rate} must be positive")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam => n_params,
        };
        Ok(OptimizerState {
            kind,
            learning_rate,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        })
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradient entries",
                params.len(),
                grad.len()
            )));
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::invalid(format!(
                        "optimizer tracks {} parameters, got {}",
                        self.first_moment.len(),
                        params.len()
                    )));
                }
                let t = (self.step_count + 1) as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
                    self.second_moment[i] =
                        self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = self.first_moment[i] / bc1;
                    let v_hat = self.second_moment[i] / bc2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon_hat);
                }
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Gradient-check error metric: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
