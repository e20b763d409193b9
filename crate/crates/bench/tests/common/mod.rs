#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use ebn_bench::data::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 28;

fn idx_images(count: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [0x0803u32, count as u32, SIDE as u32, SIDE as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    for v in [0x0801u32, labels.len() as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(labels);
    out
}

/// Noisy images where digit `d` lights up a 4-row band starting at row `2d + 4`.
fn synthetic(count: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(count * SIDE * SIDE);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let d = (i % 10) as u8;
        labels.push(d);
        let band = 2 * d as usize + 4;
        for r in 0..SIDE {
            for _ in 0..SIDE {
                let base = if (band..band + 4).contains(&r) { 180u8 } else { 20 };
                pixels.push(base.saturating_add(rng.random_range(0..60)));
            }
        }
    }
    (pixels, labels)
}

/// Writes a small four-file MNIST look-alike into `dir`.
pub fn write_fixture(dir: &Path, train: usize, test: usize) {
    let (p, l) = synthetic(train, 1);
    fs::write(dir.join(TRAIN_IMAGES), idx_images(train, &p)).unwrap();
    fs::write(dir.join(TRAIN_LABELS), idx_labels(&l)).unwrap();
    let (p, l) = synthetic(test, 2);
    fs::write(dir.join(TEST_IMAGES), idx_images(test, &p)).unwrap();
    fs::write(dir.join(TEST_LABELS), idx_labels(&l)).unwrap();
}

pub fn fixture_dir(train: usize, test: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), train, test);
    dir
}

/// Real MNIST: `$MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> PathBuf {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    assert!(
        dir.join(TRAIN_IMAGES).is_file(),
        "MNIST not found in {}; run scripts/fetch_mnist.sh or set MNIST_DIR",
        dir.display()
    );
    dir
}

/// CSV text without the wall-clock column, which is the only nondeterministic field.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|l| if l.starts_with('#') { l.to_string() } else { l.rsplit_once(',').map_or(l, |(a, _)| a).to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}
