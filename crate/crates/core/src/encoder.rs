//! Angle encoding of real feature vectors into product states.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::simcore::{ground_state, rotation_matrix, Axis, StateVector};

/// Classical features headed for the quantum register, one per wire.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature {i} is not finite")));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps each entry into (-1, 1) with tanh.
pub fn squash(features: &FeatureVector) -> FeatureVector {
    FeatureVector(features.0.iter().map(|v| v.tanh()).collect())
}

/// RY angles for already-squashed features: `pi * x`.
pub fn encoding_angles(features: &FeatureVector) -> Result<Vec<f64>> {
    features
        .0
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if !x.is_finite() || x.abs() >= 1.0 {
                Err(Error::invalid(format!(
                    "feature {i} = {x} is outside (-1, 1); squash before encoding"
                )))
            } else {
                Ok(PI * x)
            }
        })
        .collect()
}

/// Prepares `RY(pi x_0) ⊗ ... ⊗ RY(pi x_{n-1}) |0...0>`.
pub fn encode(features: &FeatureVector) -> Result<StateVector> {
    let angles = encoding_angles(features)?;
    let mut state = ground_state(angles.len())?;
    for (wire, &theta) in angles.iter().enumerate() {
        state.apply_matrix_unchecked(&rotation_matrix(Axis::Y, theta), wire);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::expect_z;

    #[test]
    fn squash_examples() {
        assert_eq!(squash(&FeatureVector(vec![0.0, 0.0])).0, vec![0.0, 0.0]);
        let big = squash(&FeatureVector(vec![50.0])).0[0];
        assert!(big <= 1.0 && big > 1.0 - 1e-12);
        // tanh(0.5) = 0.46211715726000974
        assert!((squash(&FeatureVector(vec![0.5])).0[0] - 0.462_117_157_260_009_7).abs() < 1e-15);
    }

    #[test]
    fn encode_examples() {
        let s = encode(&FeatureVector(vec![0.0; 4])).unwrap();
        assert!((s.amplitudes()[0].re - 1.0).abs() < 1e-15);
        assert!(s.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));

        let s = encode(&FeatureVector(vec![0.5])).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.amplitudes()[0].re - h).abs() < 1e-12);
        assert!((s.amplitudes()[1].re - h).abs() < 1e-12);
        assert!(expect_z(&s, 0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn encode_rejects_unsquashed() {
        assert!(matches!(
            encode(&FeatureVector(vec![0.2, 1.0])),
            Err(Error::InvalidArgument(_))
        ));
        assert!(encode(&FeatureVector(vec![-1.5])).is_err());
        assert!(FeatureVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn expectation_is_cos_pi_x_and_decreasing() {
        let mut prev = f64::INFINITY;
        for k in 1..=100 {
            let x = k as f64 / 101.0;
            let z = expect_z(&encode(&FeatureVector(vec![x])).unwrap(), 0).unwrap();
            assert!((z - (PI * x).cos()).abs() < 1e-12);
            assert!(z < prev);
            prev = z;
        }
    }

    #[test]
    fn product_structure() {
        let base = FeatureVector(vec![0.3, -0.4, 0.7]);
        let z0 = expect_z(&encode(&base).unwrap(), 0).unwrap();
        for j in 1..3 {
            let mut v = base.0.clone();
            v[j] = -v[j] * 0.5 + 0.1;
            let z = expect_z(&encode(&FeatureVector(v)).unwrap(), 0).unwrap();
            assert!((z - z0).abs() < 1e-12);
        }
        assert!((encode(&base).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
    }
}
