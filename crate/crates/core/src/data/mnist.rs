//! MNIST from IDX files as 784-step pixel sequences.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchInputs, BatchTargets, SequenceBatch};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const PIXELS: usize = 784;
pub const VALIDATION_SIZE: usize = 10_000;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Data("idx header truncated".into()))
}

/// Images as flat `rows · cols` byte vectors.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Data(format!(
            "idx image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
        )));
    }
    let n = read_u32(bytes, 4)? as usize;
    let size = read_u32(bytes, 8)? as usize * read_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    if body.len() != n * size {
        return Err(Error::Data(format!(
            "idx images: {} bytes for {n} images of {size}",
            body.len()
        )));
    }
    Ok(body.chunks_exact(size.max(1)).map(<[u8]>::to_vec).collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Data(format!(
            "idx label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
        )));
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Data(format!("idx labels: {} bytes for {n} labels", body.len())));
    }
    Ok(body.to_vec())
}

/// Pixel order applied to every image.
pub fn pixel_order(permuted: bool, seed: u64) -> Vec<usize> {
    if permuted {
        Rng::new(seed).permutation(PIXELS)
    } else {
        (0..PIXELS).collect()
    }
}

/// Step `t` is pixel `order[t]` scaled to `[0, 1]`.
pub fn pixel_sequence(image: &[u8], order: &[usize]) -> Vec<f32> {
    order.iter().map(|&i| image[i] as f32 / 255.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    /// Standard file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MnistSplit {
    pub sequences: Vec<Vec<f32>>,
    pub labels: Vec<u8>,
}

impl MnistSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Dense batch of 784 one-feature steps with class labels.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<SequenceBatch<T>> {
        let steps = self.sequences.first().map_or(0, Vec::len);
        let inputs = (0..steps)
            .map(|t| {
                let col = idx.iter().map(|&i| T::lit(self.sequences[i][t] as f64)).collect();
                Tensor::new(idx.len(), 1, col)
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = idx.iter().map(|&i| self.labels[i] as usize).collect();
        SequenceBatch::new(
            BatchInputs::Dense(inputs),
            BatchTargets::Labels(labels),
            vec![steps; idx.len()],
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MnistDataset {
    pub train: MnistSplit,
    pub valid: MnistSplit,
    pub test: MnistSplit,
}

fn build_split(images: Vec<Vec<u8>>, labels: Vec<u8>, order: &[usize]) -> Result<MnistSplit> {
    if images.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if images.iter().any(|im| im.len() != PIXELS) {
        return Err(Error::Data(format!("images must have {PIXELS} pixels")));
    }
    Ok(MnistSplit {
        sequences: images.iter().map(|im| pixel_sequence(im, order)).collect(),
        labels,
    })
}

/// Splits off the last `VALIDATION_SIZE` training images (or half when fewer exist).
pub fn from_idx_bytes(
    train_images: &[u8],
    train_labels: &[u8],
    test_images: &[u8],
    test_labels: &[u8],
    order: &[usize],
) -> Result<MnistDataset> {
    let mut train = build_split(parse_idx_images(train_images)?, parse_idx_labels(train_labels)?, order)?;
    let test = build_split(parse_idx_images(test_images)?, parse_idx_labels(test_labels)?, order)?;
    let n_valid = if train.len() > VALIDATION_SIZE {
        VALIDATION_SIZE
    } else {
        train.len() / 2
    };
    let cut = train.len() - n_valid;
    let valid = MnistSplit {
        sequences: train.sequences.split_off(cut),
        labels: train.labels.split_off(cut),
    };
    Ok(MnistDataset { train, valid, test })
}

pub fn load_mnist(paths: &MnistPaths, permuted: bool, perm_seed: u64) -> Result<MnistDataset> {
    let read = |p: &PathBuf| fs::read(p).map_err(|e| Error::io(p, e));
    from_idx_bytes(
        &read(&paths.train_images)?,
        &read(&paths.train_labels)?,
        &read(&paths.test_images)?,
        &read(&paths.test_labels)?,
        &pixel_order(permuted, perm_seed),
    )
}
