//! Hybrid classical-quantum models for spoken-command classification.
//!
//! The quantum side is a small state-vector and density-matrix simulator
//! driving a variational circuit; the classical side is a 1D CNN feature
//! extractor with dense heads. [`hybrid`] wires them together and implements
//! the classical-to-quantum transfer workflow.

pub mod audiodata;
pub mod classicalnn;
pub mod encoder;
pub mod error;
pub mod gradopt;
pub mod hybrid;
pub mod noisesim;
pub mod simcore;
pub mod vqc;

pub use error::{Error, Result};
