//! Synthetic tone dataset laid out like the speech-commands corpus, so the
//! full pipeline runs without a download.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::split::TESTING_LIST;
use super::wav::write_pcm16;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ToneDatasetSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Clips per class listed in `testing_list.txt`.
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for ToneDatasetSpec {
    fn default() -> Self {
        ToneDatasetSpec {
            classes: 4,
            clips_per_class: 50,
            duration_s: 0.5,
            sample_rate: 8000,
            test_per_class: 10,
            seed: 0,
        }
    }
}

/// Class frequencies, geometric from 250 Hz to 3600 Hz.
pub fn tone_frequencies(classes: usize) -> Vec<f64> {
    let (lo, hi) = (250.0f64, 3600.0f64);
    if classes == 1 {
        return vec![lo];
    }
    (0..classes)
        .map(|k| lo * (hi / lo).powf(k as f64 / (classes - 1) as f64))
        .collect()
}

pub fn class_name(freq: f64) -> String {
    format!("tone_{:04}hz", freq.round() as u32)
}

/// Writes `classes` folders of jittered sine clips plus a testing list.
pub fn generate_tone_dataset(root: &Path, spec: &ToneDatasetSpec) -> Result<()> {
    if spec.classes == 0 || spec.clips_per_class == 0 || spec.duration_s <= 0.0 {
        return Err(Error::invalid("tone dataset needs classes, clips and a positive duration"));
    }
    if spec.test_per_class >= spec.clips_per_class {
        return Err(Error::invalid("test clips must leave some development clips"));
    }
    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let rate = spec.sample_rate as f64;
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut testing = String::new();
    fs::create_dir_all(root)?;
    for freq in tone_frequencies(spec.classes) {
        let name = class_name(freq);
        fs::create_dir_all(root.join(&name))?;
        for clip in 0..spec.clips_per_class {
            let f = freq * rng.random_range(0.98..1.02);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.3..0.8);
            let samples: Vec<f64> = (0..n)
                .map(|t| amp * (2.0 * PI * f * t as f64 / rate + phase).sin() + noise.sample(&mut rng))
                .collect();
            let file = format!("{name}_{clip:03}.wav");
            write_pcm16(&root.join(&name).join(&file), &samples, spec.sample_rate)?;
            if clip >= spec.clips_per_class - spec.test_per_class {
                testing.push_str(&format!("{name}/{file}\n"));
            }
        }
    }
    if spec.test_per_class > 0 {
        fs::write(root.join(TESTING_LIST), testing)?;
    }
    Ok(())
}
