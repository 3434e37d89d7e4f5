//! MNIST IDX loading and row-sequence datasets.
//!
//! IDX files are big-endian: a 4-byte magic (2051 for images, 2049 for
//! labels), one 32-bit count per dimension, then raw unsigned bytes.
//! Gzip-compressed files are detected by their header and inflated in memory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Decoded image file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl RawImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header_len: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::Length {
            path: path.to_owned(),
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::Format {
            path: path.to_owned(),
            expected: magic,
            actual: found,
        });
    }
    if bytes.len() < header_len {
        return Err(Error::Length {
            path: path.to_owned(),
            expected: header_len,
            actual: bytes.len(),
        });
    }
    Ok(())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<RawImages> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    parse_idx_images(path, &bytes)
}

fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<RawImages> {
    check_header(path, bytes, IMAGE_MAGIC, 16)?;
    let count = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::Data(format!(
            "{}: images are {rows}×{cols}, expected {SIDE}×{SIDE}",
            path.display()
        )));
    }
    let expected = 16 + count * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.to_owned(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(RawImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    parse_idx_labels(path, &bytes)
}

fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    check_header(path, bytes, LABEL_MAGIC, 8)?;
    let count = be_u32(bytes, 4) as usize;
    let expected = 8 + count;
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.to_owned(),
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..].to_vec();
    if let Some((idx, &bad)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= NUM_CLASSES)
    {
        return Err(Error::Data(format!(
            "{}: label {bad} at index {idx} is outside 0..=9",
            path.display()
        )));
    }
    Ok(labels)
}

/// Fixed-length sequences with one class label each, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    steps: usize,
    width: usize,
    data: Vec<f64>,
    labels: Vec<u8>,
}

impl SequenceDataset {
    pub fn new(steps: usize, width: usize, data: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if data.len() != steps * width * labels.len() {
            return Err(Error::Data(format!(
                "{} values cannot hold {} sequences of {steps}×{width}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Data(format!("label {bad} is outside 0..=9")));
        }
        Ok(Self {
            steps,
            width,
            data,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// The `i`-th sequence, one slice per time step.
    pub fn sequence(&self, i: usize) -> std::slice::ChunksExact<'_, f64> {
        let len = self.steps * self.width;
        self.data[i * len..(i + 1) * len].chunks_exact(self.width.max(1))
    }

    /// Per-class example counts, indexed by label.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// New dataset holding the given examples in the given order.
    pub fn select(&self, indices: &[usize]) -> SequenceDataset {
        let len = self.steps * self.width;
        let mut data = Vec::with_capacity(indices.len() * len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.data[i * len..(i + 1) * len]);
            labels.push(self.labels[i]);
        }
        SequenceDataset {
            steps: self.steps,
            width: self.width,
            data,
            labels,
        }
    }
}

/// Image rows become time steps, top row first, pixels scaled by 1/255.
pub fn to_row_sequences(imgs: &RawImages, labels: &[u8]) -> Result<SequenceDataset> {
    if imgs.count != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            imgs.count,
            labels.len()
        )));
    }
    let data = imgs.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    SequenceDataset::new(imgs.rows, imgs.cols, data, labels.to_vec())
}

/// Deterministic class-stratified subset of `n` examples, in original order.
///
/// Every class gets `n / 10` examples, with the remainder going to the lowest
/// class indices. A class that is too small contributes all it has and the
/// shortfall is spread over the remaining classes the same way, so `n` equal
/// to the dataset size returns the whole dataset.
pub fn subsample(ds: &SequenceDataset, n: usize, seed: u64) -> Result<SequenceDataset> {
    if n < NUM_CLASSES {
        return Err(Error::Config(format!(
            "cannot stratify {n} examples over {NUM_CLASSES} classes"
        )));
    }
    if n > ds.len() {
        return Err(Error::Config(format!(
            "requested {n} examples from a dataset of {}",
            ds.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class.entry(l as usize).or_default().push(i);
    }

    let quotas = stratified_quotas(&ds.class_counts(), n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (class, members) in by_class.iter_mut() {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..quotas[*class]]);
    }
    chosen.sort_unstable();
    Ok(ds.select(&chosen))
}

fn stratified_quotas(counts: &[usize; NUM_CLASSES], n: usize) -> [usize; NUM_CLASSES] {
    let mut quotas = [0; NUM_CLASSES];
    let mut active: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] > 0).collect();
    let mut remaining = n;
    loop {
        if active.is_empty() {
            break;
        }
        let share = remaining / active.len();
        let extra = remaining % active.len();
        let want = |pos: usize| share + usize::from(pos < extra);
        let short: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|&(pos, &c)| counts[c] < want(pos))
            .map(|(_, &c)| c)
            .collect();
        if short.is_empty() {
            for (pos, &c) in active.iter().enumerate() {
                quotas[c] = want(pos);
            }
            break;
        }
        for c in short {
            quotas[c] = counts[c];
            remaining -= counts[c];
            active.retain(|&a| a != c);
        }
    }
    quotas
}

/// The four standard MNIST file paths under `dir`. A `.gz` sibling is used
/// when the uncompressed file is absent.
#[derive(Debug, Clone)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistFiles {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let pick = |name: &str| {
            let plain = dir.join(name);
            let gz = dir.join(format!("{name}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        Self {
            train_images: pick(TRAIN_IMAGES),
            train_labels: pick(TRAIN_LABELS),
            test_images: pick(TEST_IMAGES),
            test_labels: pick(TEST_LABELS),
        }
    }

    pub fn all_present(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.is_file())
    }

    pub fn load_train(&self) -> Result<SequenceDataset> {
        to_row_sequences(
            &load_idx_images(&self.train_images)?,
            &load_idx_labels(&self.train_labels)?,
        )
    }

    pub fn load_test(&self) -> Result<SequenceDataset> {
        to_row_sequences(
            &load_idx_images(&self.test_images)?,
            &load_idx_labels(&self.test_labels)?,
        )
    }
}
