use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wav::probe_pcm16;
use super::{ingest, Utterance, TARGET_RATE};
use crate::error::{Error, Result};

pub const COMMAND_COUNT: usize = 35;
pub const TESTING_LIST: &str = "testing_list.txt";
/// Held-out test size when no testing list ships with the data.
pub const DEFAULT_TEST_SIZE: usize = 6500;
const REFERENCE_TOTAL: usize = 11_165 + 6500;
pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Path relative to the dataset root with `/` separators.
    pub rel_path: String,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    pub min_classes: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            min_classes: COMMAND_COUNT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub root: PathBuf,
    pub label_names: Vec<String>,
    pub entries: Vec<DatasetEntry>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn indices(&self, part: Part) -> &[usize] {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn part_of(&self, index: usize) -> Option<Part> {
        [Part::Train, Part::Validation, Part::Test]
            .into_iter()
            .find(|&p| self.indices(p).binary_search(&index).is_ok())
    }

    pub fn path_of(&self, index: usize) -> PathBuf {
        self.root.join(&self.entries[index].rel_path)
    }

    /// Loads and resamples every utterance of one part.
    pub fn load_part(&self, part: Part) -> Result<Vec<Utterance>> {
        self.indices(part)
            .iter()
            .map(|&i| ingest(&self.path_of(i), self.entries[i].label))
            .collect()
    }

    pub fn manifest_records(&self) -> Result<Vec<ManifestRecord>> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let (frames, rate) = probe_pcm16(&self.path_of(i))?;
                let length = if rate == TARGET_RATE { frames } else { frames.div_ceil(2) };
                Ok(ManifestRecord {
                    path: e.rel_path.clone(),
                    label: self.label_names[e.label].clone(),
                    split: self.part_of(i).expect("every entry is assigned").name().to_string(),
                    length,
                })
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn write_manifest(&self, path: &Path) -> Result<Vec<ManifestRecord>> {
        let records = self.manifest_records()?;
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for r in &records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(records)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: String,
    pub split: String,
    pub length: usize,
}

fn is_class_dir(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    path.is_dir() && !name.starts_with('_') && !name.starts_with('.')
}

fn wav_files(dir: &Path) -> Result<Vec<String>> {
    let mut files: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_owned))
        .collect();
    files.sort();
    Ok(files)
}

pub fn split_dataset(root: &Path, seed: u64, opts: &SplitOptions) -> Result<DatasetSplit> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut classes: Vec<(String, Vec<String>)> = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| is_class_dir(p))
        .collect();
    dirs.sort();
    for dir in dirs {
        let files = wav_files(&dir)?;
        if !files.is_empty() {
            let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            classes.push((name, files));
        }
    }
    if classes.len() < opts.min_classes {
        return Err(Error::Dataset(format!(
            "found {} class folders under {}, need at least {}",
            classes.len(),
            root.display(),
            opts.min_classes
        )));
    }

    let label_names: Vec<String> = classes.iter().map(|(n, _)| n.clone()).collect();
    let entries: Vec<DatasetEntry> = classes
        .iter()
        .enumerate()
        .flat_map(|(label, (name, files))| {
            files.iter().map(move |f| DatasetEntry {
                rel_path: format!("{name}/{f}"),
                label,
            })
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list_path = root.join(TESTING_LIST);
    let mut test: Vec<usize> = if list_path.is_file() {
        let listed: HashSet<String> = fs::read_to_string(&list_path)?
            .lines()
            .map(|l| l.trim().replace('\\', "/"))
            .filter(|l| !l.is_empty())
            .collect();
        (0..entries.len())
            .filter(|&i| listed.contains(&entries[i].rel_path))
            .collect()
    } else {
        let size = DEFAULT_TEST_SIZE.min(entries.len() * DEFAULT_TEST_SIZE / REFERENCE_TOTAL);
        let mut all: Vec<usize> = (0..entries.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(size);
        all
    };
    test.sort_unstable();

    let mut dev: Vec<usize> = (0..entries.len())
        .filter(|i| test.binary_search(i).is_err())
        .collect();
    if dev.is_empty() {
        return Err(Error::Dataset("no development utterances left after the test split".into()));
    }
    dev.shuffle(&mut rng);
    let n_train = (dev.len() as f64 * TRAIN_FRACTION).round() as usize;
    let mut validation = dev.split_off(n_train);
    let mut train = dev;
    train.sort_unstable();
    validation.sort_unstable();

    Ok(DatasetSplit {
        root: root.to_path_buf(),
        label_names,
        entries,
        train,
        validation,
        test,
    })
}
