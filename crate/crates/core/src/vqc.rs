//! The trainable variational circuit: CNOT ring plus RX/RY/RZ per wire, repeated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encoding_angles, FeatureVector};
use crate::error::{Error, Result};
use crate::simcore::{ground_state, rotation_matrix, Axis, Observation, StateVector};

/// Rotation angles per wire and layer: (alpha, beta, gamma) for RX, RY, RZ.
pub const ANGLES_PER_WIRE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Entanglement {
    /// CNOT from wire i to wire (i + 1) mod n, for ascending i.
    Ring,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqcConfig {
    pub n_wires: usize,
    pub n_layers: usize,
    pub entanglement: Entanglement,
}

impl VqcConfig {
    /// Ring entanglement whenever there is more than one wire.
    pub fn new(n_wires: usize, n_layers: usize) -> Self {
        let entanglement = if n_wires >= 2 {
            Entanglement::Ring
        } else {
            Entanglement::None
        };
        VqcConfig {
            n_wires,
            n_layers,
            entanglement,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_wires == 0 || self.n_layers == 0 {
            return Err(Error::invalid("VQC needs at least one wire and one layer"));
        }
        if self.entanglement == Entanglement::Ring && self.n_wires < 2 {
            return Err(Error::invalid("ring entanglement needs at least two wires"));
        }
        ground_state(self.n_wires).map(|_| ())
    }
}

impl Default for VqcConfig {
    fn default() -> Self {
        VqcConfig::new(8, 4)
    }
}

pub fn param_count(cfg: &VqcConfig) -> usize {
    cfg.n_layers * cfg.n_wires * ANGLES_PER_WIRE
}

/// Flattened angles, layer-major, then wire, then (alpha, beta, gamma).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqcParams {
    pub n_wires: usize,
    pub n_layers: usize,
    pub angles: Vec<f64>,
}

impl VqcParams {
    pub fn zeros(cfg: &VqcConfig) -> Self {
        VqcParams {
            n_wires: cfg.n_wires,
            n_layers: cfg.n_layers,
            angles: vec![0.0; param_count(cfg)],
        }
    }

    /// Uniform on (-0.1, 0.1).
    pub fn init(cfg: &VqcConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = (0..param_count(cfg))
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        VqcParams {
            n_wires: cfg.n_wires,
            n_layers: cfg.n_layers,
            angles,
        }
    }

    pub fn from_angles(cfg: &VqcConfig, angles: Vec<f64>) -> Result<Self> {
        let p = VqcParams {
            n_wires: cfg.n_wires,
            n_layers: cfg.n_layers,
            angles,
        };
        p.check(cfg)?;
        Ok(p)
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let width = self.n_wires * ANGLES_PER_WIRE;
        &self.angles[layer * width..(layer + 1) * width]
    }

    pub fn check(&self, cfg: &VqcConfig) -> Result<()> {
        if self.n_wires != cfg.n_wires || self.n_layers != cfg.n_layers {
            return Err(Error::invalid(format!(
                "parameters are {}x{} but config is {}x{}",
                self.n_layers, self.n_wires, cfg.n_layers, cfg.n_wires
            )));
        }
        if self.angles.len() != param_count(cfg) {
            return Err(Error::invalid(format!(
                "expected {} angles, got {}",
                param_count(cfg),
                self.angles.len()
            )));
        }
        if let Some(i) = self.angles.iter().position(|a| !a.is_finite()) {
            return Err(Error::invalid(format!("angle {i} is not finite")));
        }
        Ok(())
    }
}

/// One gate of the flattened circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CircuitOp {
    Rotation { axis: Axis, angle: f64, wire: usize },
    Cnot { control: usize, target: usize },
}

pub(crate) fn layer_ops(layer_angles: &[f64], cfg: &VqcConfig, ops: &mut Vec<CircuitOp>) {
    let n = cfg.n_wires;
    if cfg.entanglement == Entanglement::Ring {
        for i in 0..n {
            ops.push(CircuitOp::Cnot {
                control: i,
                target: (i + 1) % n,
            });
        }
    }
    for wire in 0..n {
        let a = &layer_angles[wire * ANGLES_PER_WIRE..(wire + 1) * ANGLES_PER_WIRE];
        for (axis, &angle) in [Axis::X, Axis::Y, Axis::Z].into_iter().zip(a) {
            ops.push(CircuitOp::Rotation { axis, angle, wire });
        }
    }
}

/// Encoding rotations followed by every layer. Lengths are assumed validated.
pub fn circuit_ops(encoding: &[f64], angles: &[f64], cfg: &VqcConfig) -> Vec<CircuitOp> {
    let mut ops: Vec<CircuitOp> = encoding
        .iter()
        .enumerate()
        .map(|(wire, &angle)| CircuitOp::Rotation {
            axis: Axis::Y,
            angle,
            wire,
        })
        .collect();
    let width = cfg.n_wires * ANGLES_PER_WIRE;
    for layer in angles.chunks(width) {
        layer_ops(layer, cfg, &mut ops);
    }
    ops
}

fn run_ops(state: &mut StateVector, ops: &[CircuitOp]) {
    for op in ops {
        match *op {
            CircuitOp::Rotation { axis, angle, wire } => {
                state.apply_matrix_unchecked(&rotation_matrix(axis, angle), wire)
            }
            CircuitOp::Cnot { control, target } => state.apply_cnot_unchecked(control, target),
        }
    }
}

pub fn vqc_layer(mut state: StateVector, layer_angles: &[f64], cfg: &VqcConfig) -> Result<StateVector> {
    cfg.validate()?;
    if state.n_qubits() != cfg.n_wires {
        return Err(Error::invalid(format!(
            "state has {} qubits, config has {} wires",
            state.n_qubits(),
            cfg.n_wires
        )));
    }
    if layer_angles.len() != cfg.n_wires * ANGLES_PER_WIRE {
        return Err(Error::invalid(format!(
            "layer needs {} angles, got {}",
            cfg.n_wires * ANGLES_PER_WIRE,
            layer_angles.len()
        )));
    }
    if layer_angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("layer angle is not finite"));
    }
    let mut ops = Vec::new();
    layer_ops(layer_angles, cfg, &mut ops);
    run_ops(&mut state, &ops);
    Ok(state)
}

/// Expectations for raw encoding angles. Panics on mismatched lengths; the
/// fallible entry points validate first.
pub(crate) fn expectations_unchecked(encoding: &[f64], angles: &[f64], cfg: &VqcConfig) -> Vec<f64> {
    assert_eq!(encoding.len(), cfg.n_wires);
    assert_eq!(angles.len(), param_count(cfg));
    let mut state = ground_state(cfg.n_wires).expect("validated wire count");
    run_ops(&mut state, &circuit_ops(encoding, angles, cfg));
    Observation::measure(&state).0
}

/// Like [`qnn_forward`] but takes the RY encoding angles directly.
pub fn qnn_forward_angles(encoding: &[f64], params: &VqcParams, cfg: &VqcConfig) -> Result<Observation> {
    cfg.validate()?;
    params.check(cfg)?;
    if encoding.len() != cfg.n_wires {
        return Err(Error::invalid(format!(
            "{} encoding angles for {} wires",
            encoding.len(),
            cfg.n_wires
        )));
    }
    if encoding.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("encoding angle is not finite"));
    }
    Ok(Observation(expectations_unchecked(encoding, &params.angles, cfg)))
}

/// Encode, run every layer, measure Z on each wire.
pub fn qnn_forward(features: &FeatureVector, params: &VqcParams, cfg: &VqcConfig) -> Result<Observation> {
    if features.len() != cfg.n_wires {
        return Err(Error::invalid(format!(
            "{} features for {} wires",
            features.len(),
            cfg.n_wires
        )));
    }
    qnn_forward_angles(&encoding_angles(features)?, params, cfg)
}
