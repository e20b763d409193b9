//! MNIST ingestion from IDX files, global standardization and seeded
//! minibatch iteration.
//!
//! IDX layout: a big-endian `u32` magic (`0x00000803` for images,
//! `0x00000801` for labels), one big-endian `u32` per dimension, then the
//! raw `u8` payload.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ebn::{Shape4, Tensor4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Images flattened to `(N, rows·cols, 1, 1)` with integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.images.shape().c
    }

    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4, Vec<usize>)> {
        let x = self.images.gather_batch(indices)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn truncated(&self, n: usize) -> Result<Dataset> {
        let n = n.min(self.len());
        Ok(Dataset {
            images: self.images.slice_batch(0, n)?,
            labels: self.labels[..n].to_vec(),
            split: self.split,
        })
    }
}

/// Decoded IDX image file, pixels still as raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| BenchError::ingestion(path, "truncated header"))
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(BenchError::ingestion(
            path,
            format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} (IDX images)"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() != expected {
        return Err(BenchError::ingestion(
            path,
            format!("payload has {} bytes, header promises {expected}", payload.len()),
        ));
    }
    if expected == 0 {
        return Err(BenchError::ingestion(path, "no pixels"));
    }
    Ok(IdxImages { count, rows, cols, pixels: payload.to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(BenchError::ingestion(
            path,
            format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x} (IDX labels)"),
        ));
    }
    let count = read_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(BenchError::ingestion(
            path,
            format!("payload has {} bytes, header promises {count}", payload.len()),
        ));
    }
    if let Some(bad) = payload.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(BenchError::ingestion(path, format!("label {bad} is not a digit")));
    }
    Ok(payload.iter().map(|&l| l as usize).collect())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| BenchError::ingestion(path, e.to_string()))
}

/// Reads one split, pixels scaled to `[0, 1]` but not yet standardized.
pub fn load_idx_pair(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if images.count != labels.len() {
        return Err(BenchError::ingestion(
            labels_path,
            format!("{} labels for {} images in {}", labels.len(), images.count, images_path.display()),
        ));
    }
    let data = images.pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let shape = Shape4::nc(images.count, images.rows * images.cols);
    Ok(Dataset { images: Tensor4::from_vec(shape, data)?, labels, split })
}

/// Single scalar mean and standard deviation over every training pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(images: &Tensor4) -> Result<Self> {
        let data = images.data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(BenchError::Config(format!(
                "cannot standardize: pixel standard deviation is {std}"
            )));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, images: &mut Tensor4) {
        let (m, s) = (self.mean, self.std);
        images.data_mut().iter_mut().for_each(|v| *v = (*v - m) / s);
    }
}

/// Standardizes `images` with constants fitted to `images` themselves.
pub fn standardize_global(images: &Tensor4) -> Result<(Tensor4, Standardizer)> {
    let st = Standardizer::fit(images)?;
    let mut out = images.clone();
    st.apply(&mut out);
    Ok((out, st))
}

/// Both MNIST splits, standardized with the training split's constants.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let mut train = load_idx_pair(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS), Split::Train)?;
    let mut test = load_idx_pair(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS), Split::Test)?;
    if train.features() != test.features() {
        return Err(BenchError::ingestion(
            dir.join(TEST_IMAGES),
            format!("{} pixels per image, train split has {}", test.features(), train.features()),
        ));
    }
    let standardizer = Standardizer::fit(&train.images).map_err(|e| match e {
        BenchError::Config(reason) => BenchError::ingestion(dir.join(TRAIN_IMAGES), reason),
        other => other,
    })?;
    standardizer.apply(&mut train.images);
    standardizer.apply(&mut test.images);
    Ok(Mnist { train, test, standardizer })
}

/// Default data directory: `$MNIST_DIR`, else `data/mnist`.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os("MNIST_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Seeded per-epoch shuffling into minibatches.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    drop_last: bool,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64, drop_last: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(BenchError::Config("batch size must be at least 1".into()));
        }
        Ok(BatchIterator {
            len,
            batch_size,
            drop_last,
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..len).collect(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        if self.drop_last {
            self.len / self.batch_size
        } else {
            self.len.div_ceil(self.batch_size)
        }
    }

    /// Index lists for the next epoch. The permutation is drawn from the
    /// iterator's own stream, so epoch `k` is identical across runs.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.sort_unstable();
        self.order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> =
            self.order.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
        if self.drop_last && batches.last().is_some_and(|b| b.len() < self.batch_size) {
            batches.pop();
        }
        batches
    }
}
