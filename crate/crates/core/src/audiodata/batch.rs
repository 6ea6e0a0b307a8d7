use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Utterance;
use crate::classicalnn::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[batch, 1, longest]`, right-padded with zeros.
    pub waveforms: Tensor,
    pub labels: Vec<usize>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn from_utterances(utts: &[&Utterance]) -> Result<Self> {
        let longest = utts.iter().map(|u| u.samples.len()).max().unwrap_or(0);
        if utts.is_empty() || longest == 0 {
            return Err(Error::invalid("cannot batch empty utterances"));
        }
        let mut data = vec![0.0; utts.len() * longest];
        for (row, u) in data.chunks_mut(longest).zip(utts) {
            row[..u.samples.len()].copy_from_slice(&u.samples);
        }
        Ok(Batch {
            waveforms: Tensor::new(vec![utts.len(), 1, longest], data)?,
            labels: utts.iter().map(|u| u.label).collect(),
            lengths: utts.iter().map(|u| u.samples.len()).collect(),
        })
    }
}

/// Groups utterances into batches of `batch_size` (the last may be short).
/// With a seed the order is shuffled first.
pub fn make_batches(utts: &[Utterance], batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if utts.is_empty() {
        return Err(Error::invalid("cannot batch an empty split"));
    }
    let mut order: Vec<&Utterance> = utts.iter().collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(Batch::from_utterances).collect()
}
