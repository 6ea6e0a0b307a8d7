//! Density-matrix simulation with single-qubit Pauli noise channels.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::encoder::{encoding_angles, FeatureVector};
use crate::error::{Error, Result};
use crate::simcore::{rotation_matrix, Matrix2, Observation, StateVector, ONE, ZERO};
use crate::vqc::{circuit_ops, CircuitOp, VqcConfig, VqcParams};

/// Largest register the density-matrix simulator accepts (2^16 entries).
pub const MAX_DENSITY_QUBITS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    dim: usize,
    entries: Vec<Complex64>,
}

impl DensityMatrix {
    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim + col]
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// `Tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        let d = self.dim;
        let mut acc = ZERO;
        for i in 0..d {
            for j in 0..d {
                acc += self.get(i, j) * self.get(j, i);
            }
        }
        acc.re
    }

    /// Largest `|rho_ij - conj(rho_ji)|`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    fn mask(&self, wire: usize) -> usize {
        1 << (self.n_qubits - 1 - wire)
    }

    fn check_wire(&self, wire: usize) -> Result<()> {
        if wire >= self.n_qubits {
            return Err(Error::invalid(format!(
                "wire {wire} out of range for {} qubits",
                self.n_qubits
            )));
        }
        Ok(())
    }

    fn apply_unitary_unchecked(&mut self, m: &Matrix2, wire: usize) {
        let d = self.dim;
        let mask = self.mask(wire);
        let e = &mut self.entries;
        // U rho: mix row pairs
        for r0 in (0..d).filter(|r| r & mask == 0) {
            let r1 = r0 | mask;
            for c in 0..d {
                let (a, b) = (e[r0 * d + c], e[r1 * d + c]);
                e[r0 * d + c] = m[0][0] * a + m[0][1] * b;
                e[r1 * d + c] = m[1][0] * a + m[1][1] * b;
            }
        }
        // (U rho) U^dagger: mix column pairs with conjugated entries
        let mc = [
            [m[0][0].conj(), m[0][1].conj()],
            [m[1][0].conj(), m[1][1].conj()],
        ];
        for r in 0..d {
            let row = &mut e[r * d..(r + 1) * d];
            for c0 in (0..d).filter(|c| c & mask == 0) {
                let c1 = c0 | mask;
                let (a, b) = (row[c0], row[c1]);
                row[c0] = a * mc[0][0] + b * mc[0][1];
                row[c1] = a * mc[1][0] + b * mc[1][1];
            }
        }
    }

    pub fn apply_unitary(&mut self, m: &Matrix2, wire: usize) -> Result<()> {
        self.check_wire(wire)?;
        self.apply_unitary_unchecked(m, wire);
        Ok(())
    }

    fn apply_cnot_unchecked(&mut self, control: usize, target: usize) {
        let (cm, tm) = (self.mask(control), self.mask(target));
        let d = self.dim;
        let perm = |i: usize| if i & cm != 0 { i ^ tm } else { i };
        let old = self.entries.clone();
        for r in 0..d {
            let pr = perm(r);
            for c in 0..d {
                self.entries[r * d + c] = old[pr * d + perm(c)];
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_wire(control)?;
        self.check_wire(target)?;
        if control == target {
            return Err(Error::invalid("CNOT control equals target"));
        }
        self.apply_cnot_unchecked(control, target);
        Ok(())
    }

    /// General single-wire Kraus map `sum_k K rho K^dagger`.
    pub fn apply_kraus(&mut self, kraus: &[Matrix2], wire: usize) -> Result<()> {
        self.check_wire(wire)?;
        let mut acc = vec![ZERO; self.entries.len()];
        for k in kraus {
            let mut term = self.clone();
            term.apply_unitary_unchecked(k, wire);
            for (a, t) in acc.iter_mut().zip(&term.entries) {
                *a += t;
            }
        }
        self.entries = acc;
        Ok(())
    }

    /// Mixture of Pauli conjugations on one wire with weights (I, X, Y, Z).
    fn apply_pauli_mixture(&mut self, w: [f64; 4], wire: usize) {
        let d = self.dim;
        let mask = self.mask(wire);
        let old = self.entries.clone();
        for r in 0..d {
            for c in 0..d {
                let same = old[r * d + c];
                let flipped = old[(r ^ mask) * d + (c ^ mask)];
                // Z rho Z picks up -1 when the wire bit differs between row and column
                let sign = if (r ^ c) & mask == 0 { 1.0 } else { -1.0 };
                self.entries[r * d + c] =
                    same * (w[0] + sign * w[3]) + flipped * (w[1] + sign * w[2]);
            }
        }
    }

    pub fn expect_z(&self, wire: usize) -> Result<f64> {
        self.check_wire(wire)?;
        Ok(self.expect_z_unchecked(wire))
    }

    fn expect_z_unchecked(&self, wire: usize) -> f64 {
        let mask = self.mask(wire);
        (0..self.dim)
            .map(|i| {
                let p = self.get(i, i).re;
                if i & mask == 0 {
                    p
                } else {
                    -p
                }
            })
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    }
}

pub fn to_density(state: &StateVector) -> Result<DensityMatrix> {
    let n = state.n_qubits();
    if n > MAX_DENSITY_QUBITS {
        return Err(Error::Capacity {
            what: "density-matrix qubit count",
            requested: n,
            limit: MAX_DENSITY_QUBITS,
        });
    }
    let amps = state.amplitudes();
    let dim = amps.len();
    let mut entries = Vec::with_capacity(dim * dim);
    for a in amps {
        for b in amps {
            entries.push(a * b.conj());
        }
    }
    Ok(DensityMatrix {
        n_qubits: n,
        dim,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChannel {
    Depolarizing,
    BitFlip,
    PhaseFlip,
}

impl NoiseChannel {
    fn name(self) -> &'static str {
        match self {
            NoiseChannel::Depolarizing => "depolarizing",
            NoiseChannel::BitFlip => "bit_flip",
            NoiseChannel::PhaseFlip => "phase_flip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePlacement {
    /// Channel on every wire a gate touches, after the gate (encoding included).
    AfterEveryGate,
    /// Channel once on every wire just before measurement.
    BeforeMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub channel: NoiseChannel,
    pub probability: f64,
    pub placement: NoisePlacement,
}

impl NoiseSpec {
    pub fn new(channel: NoiseChannel, probability: f64) -> Result<Self> {
        let spec = NoiseSpec {
            channel,
            probability,
            placement: NoisePlacement::AfterEveryGate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn depolarizing(probability: f64) -> Result<Self> {
        Self::new(NoiseChannel::Depolarizing, probability)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid(format!(
                "noise probability {} is outside [0, 1]",
                self.probability
            )));
        }
        Ok(())
    }

    /// Weights of the I, X, Y, Z conjugations.
    fn pauli_weights(&self) -> [f64; 4] {
        let p = self.probability;
        match self.channel {
            NoiseChannel::Depolarizing => [1.0 - p, p / 3.0, p / 3.0, p / 3.0],
            NoiseChannel::BitFlip => [1.0 - p, p, 0.0, 0.0],
            NoiseChannel::PhaseFlip => [1.0 - p, 0.0, 0.0, p],
        }
    }

    /// Explicit Kraus operators of the channel.
    pub fn kraus_operators(&self) -> Vec<Matrix2> {
        let i = Complex64::new(0.0, 1.0);
        let paulis: [Matrix2; 4] = [
            [[ONE, ZERO], [ZERO, ONE]],
            [[ZERO, ONE], [ONE, ZERO]],
            [[ZERO, -i], [i, ZERO]],
            [[ONE, ZERO], [ZERO, -ONE]],
        ];
        self.pauli_weights()
            .iter()
            .zip(paulis)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, p)| {
                let s = w.sqrt();
                [[p[0][0] * s, p[0][1] * s], [p[1][0] * s, p[1][1] * s]]
            })
            .collect()
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.channel.name(), self.probability)
    }
}

/// Parses `channel:probability`, e.g. `depolarizing:0.01`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, prob) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("noise spec '{s}' is not channel:probability")))?;
        let channel = match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "depolarizing" | "depolarising" => NoiseChannel::Depolarizing,
            "bit_flip" | "bitflip" => NoiseChannel::BitFlip,
            "phase_flip" | "phaseflip" => NoiseChannel::PhaseFlip,
            other => return Err(Error::invalid(format!("unknown noise channel '{other}'"))),
        };
        let probability: f64 = prob
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("noise probability '{prob}' is not a number")))?;
        NoiseSpec::new(channel, probability)
    }
}

pub fn apply_channel(mut rho: DensityMatrix, spec: &NoiseSpec, wire: usize) -> Result<DensityMatrix> {
    spec.validate()?;
    rho.check_wire(wire)?;
    rho.apply_pauli_mixture(spec.pauli_weights(), wire);
    Ok(rho)
}

/// Noisy counterpart of [`crate::vqc::qnn_forward_angles`].
pub fn noisy_qnn_forward_angles(
    encoding: &[f64],
    params: &VqcParams,
    cfg: &VqcConfig,
    spec: &NoiseSpec,
) -> Result<Observation> {
    spec.validate()?;
    cfg.validate()?;
    params.check(cfg)?;
    if cfg.n_wires > MAX_DENSITY_QUBITS {
        return Err(Error::Capacity {
            what: "density-matrix qubit count",
            requested: cfg.n_wires,
            limit: MAX_DENSITY_QUBITS,
        });
    }
    if encoding.len() != cfg.n_wires || encoding.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("encoding angles do not match the wire count"));
    }
    let mut rho = to_density(&crate::simcore::ground_state(cfg.n_wires)?)?;
    let weights = spec.pauli_weights();
    let noisy = spec.probability > 0.0;
    for op in circuit_ops(encoding, &params.angles, cfg) {
        match op {
            CircuitOp::Rotation { axis, angle, wire } => {
                rho.apply_unitary_unchecked(&rotation_matrix(axis, angle), wire);
                if noisy && spec.placement == NoisePlacement::AfterEveryGate {
                    rho.apply_pauli_mixture(weights, wire);
                }
            }
            CircuitOp::Cnot { control, target } => {
                rho.apply_cnot_unchecked(control, target);
                if noisy && spec.placement == NoisePlacement::AfterEveryGate {
                    rho.apply_pauli_mixture(weights, control);
                    rho.apply_pauli_mixture(weights, target);
                }
            }
        }
    }
    if noisy && spec.placement == NoisePlacement::BeforeMeasurement {
        for wire in 0..cfg.n_wires {
            rho.apply_pauli_mixture(weights, wire);
        }
    }
    Ok(Observation(
        (0..cfg.n_wires).map(|w| rho.expect_z_unchecked(w)).collect(),
    ))
}

pub fn noisy_qnn_forward(
    features: &FeatureVector,
    params: &VqcParams,
    cfg: &VqcConfig,
    spec: &NoiseSpec,
) -> Result<Observation> {
    if features.len() != cfg.n_wires {
        return Err(Error::invalid(format!(
            "{} features for {} wires",
            features.len(),
            cfg.n_wires
        )));
    }
    noisy_qnn_forward_angles(&encoding_angles(features)?, params, cfg, spec)
}
