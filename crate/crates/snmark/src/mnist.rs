//! IDX-format ingestion and the train/validation/test split.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Seed of the fixed 55k/5k train/validation split.
const SPLIT_SEED: u64 = 7_405_106;
pub const VALIDATION_SIZE: usize = 5_000;

fn read_u32_be(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

fn read_payload(reader: &mut impl Read, expected: usize) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(expected);
    reader.take(expected as u64).read_to_end(&mut data)?;
    if data.len() != expected {
        return Err(Error::IdxTruncated { expected, found: data.len() });
    }
    Ok(data)
}

/// Reads an IDX image file into an N×784 tensor with pixels mapped to [0,1]
/// by v/255.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let magic = read_u32_be(&mut reader)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxBadMagic { found: magic, expected: IMAGE_MAGIC });
    }
    let count = read_u32_be(&mut reader)? as usize;
    let rows = read_u32_be(&mut reader)? as usize;
    let cols = read_u32_be(&mut reader)? as usize;
    if rows != SIDE || cols != SIDE {
        return Err(Error::InvalidTensor(format!("expected 28x28 images, got {rows}x{cols}")));
    }
    let raw = read_payload(&mut reader, count * rows * cols)?;
    let data: Vec<f32> = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![count, rows * cols], data)
}

/// Reads an IDX label file.
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let mut reader = BufReader::new(File::open(path.as_ref())?);
    let magic = read_u32_be(&mut reader)?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxBadMagic { found: magic, expected: LABEL_MAGIC });
    }
    let count = read_u32_be(&mut reader)? as usize;
    let labels = read_payload(&mut reader, count)?;
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::InvalidTensor(format!("label {bad} out of range")));
    }
    Ok(labels)
}

/// Loads one image/label file pair and cross-checks the counts.
pub fn load_mnist(
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<(Tensor<f32>, Vec<u8>)> {
    let images = read_idx_images(image_path)?;
    let labels = read_idx_labels(label_path)?;
    if images.outer_len() != labels.len() {
        return Err(Error::IdxCountMismatch { images: images.outer_len(), labels: labels.len() });
    }
    Ok((images, labels))
}

/// The full dataset: 55,000 training, 5,000 validation and 10,000 test
/// samples. The validation split is a fixed pseudo-random subset of the
/// 60,000 training images and is never used for training.
pub struct Dataset {
    pub train_images: Tensor<f32>,
    pub train_labels: Vec<u8>,
    pub val_images: Tensor<f32>,
    pub val_labels: Vec<u8>,
    pub test_images: Tensor<f32>,
    pub test_labels: Vec<u8>,
}

impl Dataset {
    /// Loads the four standard files from `dir` and applies the fixed split.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (all_images, all_labels) = load_mnist(dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))?;
        let (test_images, test_labels) = load_mnist(dir.join(TEST_IMAGES), dir.join(TEST_LABELS))?;

        let n = all_images.outer_len();
        if n <= VALIDATION_SIZE {
            return Err(Error::Config(format!("{n} training images cannot spare a validation split")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut split_rng = rng::stream(SPLIT_SEED, "train-val-split");
        rng::shuffle(&mut order, &mut split_rng);
        let (train_idx, val_idx) = order.split_at(n - VALIDATION_SIZE);

        let width = SIDE * SIDE;
        let gather = |idx: &[usize]| -> (Tensor<f32>, Vec<u8>) {
            let mut images = Tensor::zeros(vec![idx.len(), width]);
            let mut labels = Vec::with_capacity(idx.len());
            for (row, &src) in idx.iter().enumerate() {
                images.data_mut()[row * width..(row + 1) * width]
                    .copy_from_slice(all_images.row(src));
                labels.push(all_labels[src]);
            }
            (images, labels)
        };
        let (train_images, train_labels) = gather(train_idx);
        let (val_images, val_labels) = gather(val_idx);
        Ok(Self { train_images, train_labels, val_images, val_labels, test_images, test_labels })
    }

    /// Standard location: `$SNMARK_MNIST_DIR` or `./data/mnist`.
    pub fn default_dir() -> std::path::PathBuf {
        std::env::var_os("SNMARK_MNIST_DIR")
            .map(std::path::PathBuf::from)
            .unwrap_or_else(|| std::path::PathBuf::from("data/mnist"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_images(path: &Path, count: u32, truncate: usize) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&count.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        let payload = vec![255u8; count as usize * 784 - truncate];
        f.write_all(&payload).unwrap();
    }

    fn write_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn parses_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");
        write_images(&img, 3, 0);
        write_labels(&lbl, &[1, 2, 3]);
        let (images, labels) = load_mnist(&img, &lbl).unwrap();
        assert_eq!(images.shape(), &[3, 784]);
        assert_eq!(labels, vec![1, 2, 3]);
        // pixel 255 maps to 1.0
        assert_eq!(images.data()[0], 1.0);
    }

    #[test]
    fn distinct_errors_for_each_failure() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lbl = dir.path().join("lbl");

        // wrong magic
        std::fs::write(&img, 0x12345678u32.to_be_bytes()).unwrap();
        assert!(matches!(read_idx_images(&img), Err(Error::IdxBadMagic { .. })));

        // truncation
        write_images(&img, 2, 100);
        assert!(matches!(
            read_idx_images(&img),
            Err(Error::IdxTruncated { expected: 1568, found: 1468 })
        ));

        // count mismatch
        write_images(&img, 2, 0);
        write_labels(&lbl, &[1, 2, 3]);
        assert!(matches!(
            load_mnist(&img, &lbl),
            Err(Error::IdxCountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn real_dataset_loads_with_exact_split() {
        let dir = Dataset::default_dir();
        if !dir.join(TRAIN_IMAGES).exists() {
            eprintln!("skipping: MNIST not present under {}", dir.display());
            return;
        }
        let ds = Dataset::load(&dir).unwrap();
        assert_eq!(ds.train_images.outer_len(), 55_000);
        assert_eq!(ds.val_images.outer_len(), 5_000);
        assert_eq!(ds.test_images.outer_len(), 10_000);
        assert!(ds.train_images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));

        // split is deterministic
        let again = Dataset::load(&dir).unwrap();
        assert_eq!(ds.val_labels, again.val_labels);
    }
}
