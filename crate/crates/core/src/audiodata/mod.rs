//! Dataset ingestion: WAV decoding, 16 kHz to 8 kHz resampling, splits,
//! manifests and zero-padded batching.

mod batch;
mod resample;
mod split;
pub mod synth;
mod wav;

pub use batch::{make_batches, Batch};
pub use resample::{decimate_by_two, lowpass_taps, resample_16k_to_8k, CUTOFF_HZ, FILTER_TAPS};
pub use split::{
    split_dataset, DatasetEntry, DatasetSplit, ManifestRecord, Part, SplitOptions, COMMAND_COUNT,
    TESTING_LIST,
};
pub use wav::{probe_pcm16, read_pcm16, write_pcm16};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Sample rate every utterance is brought to.
pub const TARGET_RATE: u32 = 8000;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: usize,
    pub source_path: PathBuf,
}

/// Reads a clip as-is; the label comes from the parent folder's position in
/// `label_names`.
pub fn load_wav(path: &Path, label_names: &[String]) -> Result<Utterance> {
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or_default();
    let label = label_names
        .iter()
        .position(|n| n == parent)
        .ok_or_else(|| Error::Dataset(format!("{} is not under a known label folder", path.display())))?;
    let (samples, sample_rate) = read_pcm16(path)?;
    Ok(Utterance {
        samples,
        sample_rate,
        label,
        source_path: path.to_path_buf(),
    })
}

/// Reads a clip and brings it to [`TARGET_RATE`].
pub(crate) fn ingest(path: &Path, label: usize) -> Result<Utterance> {
    let (samples, sample_rate) = read_pcm16(path)?;
    let u = Utterance {
        samples,
        sample_rate,
        label,
        source_path: path.to_path_buf(),
    };
    match sample_rate {
        TARGET_RATE => Ok(u),
        16_000 => resample_16k_to_8k(&u),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported sample rate {other} Hz"),
        }),
    }
}
