use std::f64::consts::PI;

use super::{Utterance, TARGET_RATE};
use crate::error::{Error, Result};

pub const FILTER_TAPS: usize = 63;
pub const CUTOFF_HZ: f64 = 3600.0;

/// Hamming-windowed sinc low-pass for 16 kHz input, unit DC gain.
pub fn lowpass_taps() -> Vec<f64> {
    let fc = CUTOFF_HZ / 16_000.0;
    let mid = (FILTER_TAPS / 2) as f64;
    let mut taps: Vec<f64> = (0..FILTER_TAPS)
        .map(|n| {
            let x = n as f64 - mid;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * x).sin() / (PI * x)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (FILTER_TAPS - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Low-pass then keep every other sample. Edges replicate the boundary sample.
pub fn decimate_by_two(samples: &[f64]) -> Vec<f64> {
    if samples.is_empty() {
        return Vec::new();
    }
    let taps = lowpass_taps();
    let mid = (FILTER_TAPS / 2) as isize;
    let last = samples.len() as isize - 1;
    (0..samples.len().div_ceil(2))
        .map(|m| {
            let centre = 2 * m as isize;
            taps.iter()
                .enumerate()
                .map(|(k, h)| {
                    let idx = (centre + k as isize - mid).clamp(0, last) as usize;
                    h * samples[idx]
                })
                .sum()
        })
        .collect()
}

pub fn resample_16k_to_8k(u: &Utterance) -> Result<Utterance> {
    if u.sample_rate != 16_000 {
        return Err(Error::invalid(format!(
            "expected a 16000 Hz utterance, got {} Hz",
            u.sample_rate
        )));
    }
    Ok(Utterance {
        samples: decimate_by_two(&u.samples),
        sample_rate: TARGET_RATE,
        label: u.label,
        source_path: u.source_path.clone(),
    })
}
