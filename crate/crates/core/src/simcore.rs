//! Pure-state register simulation.
//!
//! Wire 0 is the most significant bit of a basis index, so on an `n`-qubit
//! register wire `w` owns bit `n - 1 - w`.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest register the pure-state simulator accepts.
pub const MAX_QUBITS: usize = 12;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub type Matrix2 = [[Complex64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateLabel {
    RX,
    RY,
    RZ,
    PauliZ,
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GateLabel::RX => "RX",
            GateLabel::RY => "RY",
            GateLabel::RZ => "RZ",
            GateLabel::PauliZ => "Z",
        };
        f.write_str(name)
    }
}

/// A single-qubit gate with its 2x2 unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate1Q {
    pub matrix: Matrix2,
    pub label: GateLabel,
    pub angle: Option<f64>,
}

impl Gate1Q {
    pub fn pauli_z() -> Self {
        Gate1Q {
            matrix: [[ONE, ZERO], [ZERO, -ONE]],
            label: GateLabel::PauliZ,
            angle: None,
        }
    }

    /// Largest entry of `U^dagger U - I`.
    pub fn unitarity_error(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                let acc: Complex64 = m.iter().map(|row| row[i].conj() * row[j]).sum();
                let expected = if i == j { ONE } else { ZERO };
                worst = worst.max((acc - expected).norm());
            }
        }
        worst
    }
}

/// Half-angle rotation matrix about `axis`. Infallible; callers check finiteness.
pub(crate) fn rotation_matrix(axis: Axis, angle: f64) -> Matrix2 {
    let (s, c) = (angle / 2.0).sin_cos();
    match axis {
        Axis::X => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        Axis::Y => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        Axis::Z => [
            [Complex64::new(c, -s), ZERO],
            [ZERO, Complex64::new(c, s)],
        ],
    }
}

pub fn make_rotation(axis: Axis, angle: f64) -> Result<Gate1Q> {
    if !angle.is_finite() {
        return Err(Error::invalid(format!("rotation angle {angle} is not finite")));
    }
    let label = match axis {
        Axis::X => GateLabel::RX,
        Axis::Y => GateLabel::RY,
        Axis::Z => GateLabel::RZ,
    };
    Ok(Gate1Q {
        matrix: rotation_matrix(axis, angle),
        label,
        angle: Some(angle),
    })
}

/// Amplitudes of an `n`-qubit pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Wraps raw amplitudes. The length must be `2^n` for some `n` in range;
    /// normalization is the caller's responsibility.
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "amplitude count {len} is not a power of two >= 2"
            )));
        }
        let n_qubits = len.trailing_zeros() as usize;
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity {
                what: "qubit count",
                requested: n_qubits,
                limit: MAX_QUBITS,
            });
        }
        Ok(StateVector {
            n_qubits,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
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

    /// Bit mask of `wire` within a basis index.
    pub(crate) fn wire_mask(&self, wire: usize) -> usize {
        1 << (self.n_qubits - 1 - wire)
    }

    pub(crate) fn apply_matrix_unchecked(&mut self, m: &Matrix2, wire: usize) {
        let mask = self.wire_mask(wire);
        let amps = &mut self.amplitudes;
        for i0 in 0..amps.len() {
            if i0 & mask != 0 {
                continue;
            }
            let i1 = i0 | mask;
            let (a0, a1) = (amps[i0], amps[i1]);
            amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    pub(crate) fn apply_cnot_unchecked(&mut self, control: usize, target: usize) {
        let cmask = self.wire_mask(control);
        let tmask = self.wire_mask(target);
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
    }

    pub(crate) fn expect_z_unchecked(&self, wire: usize) -> f64 {
        let mask = self.wire_mask(wire);
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| if i & mask == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    }
}

pub fn ground_state(n_qubits: usize) -> Result<StateVector> {
    if n_qubits == 0 {
        return Err(Error::invalid("a register needs at least one qubit"));
    }
    if n_qubits > MAX_QUBITS {
        return Err(Error::Capacity {
            what: "qubit count",
            requested: n_qubits,
            limit: MAX_QUBITS,
        });
    }
    let mut amplitudes = vec![ZERO; 1 << n_qubits];
    amplitudes[0] = ONE;
    Ok(StateVector {
        n_qubits,
        amplitudes,
    })
}

pub fn apply_1q(mut state: StateVector, gate: &Gate1Q, wire: usize) -> Result<StateVector> {
    state.check_wire(wire)?;
    state.apply_matrix_unchecked(&gate.matrix, wire);
    Ok(state)
}

pub fn apply_cnot(mut state: StateVector, control: usize, target: usize) -> Result<StateVector> {
    state.check_wire(control)?;
    state.check_wire(target)?;
    if control == target {
        return Err(Error::invalid(format!(
            "CNOT control and target are both wire {control}"
        )));
    }
    state.apply_cnot_unchecked(control, target);
    Ok(state)
}

/// Pauli-Z expectation on `wire`, clamped into [-1, 1].
pub fn expect_z(state: &StateVector, wire: usize) -> Result<f64> {
    state.check_wire(wire)?;
    Ok(state.expect_z_unchecked(wire))
}

/// Per-wire Pauli-Z expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn measure(state: &StateVector) -> Self {
        Observation(
            (0..state.n_qubits)
                .map(|w| state.expect_z_unchecked(w))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}
