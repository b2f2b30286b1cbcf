//! Datasets: MNIST ingestion, the fixed train/validation/test split and a
//! synthetic class-conditional Bernoulli dataset.

pub mod idx;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{parse_idx, IdxData};
pub use synth::{synth_dataset, SynthParams};

pub const MNIST_TRAIN: usize = 50_000;
pub const MNIST_VAL: usize = 10_000;
pub const MNIST_TEST: usize = 10_000;

/// Images in `[0, 1]` with aligned class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() {
            return Err(Error::Input(format!(
                "{} image rows but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::Input(format!("label {l} outside 0..9")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("pixel outside [0, 1]".into()));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// First 50 000 training rows → train, last 10 000 → validation, official
/// test set → test. No shuffling: the split is independent of any seed.
pub fn make_splits(
    train_images: Tensor,
    train_labels: Vec<u8>,
    test_images: Tensor,
    test_labels: Vec<u8>,
) -> Result<DatasetSplit> {
    if train_images.rows() != MNIST_TRAIN + MNIST_VAL {
        return Err(Error::Input(format!(
            "expected {} training rows, found {}",
            MNIST_TRAIN + MNIST_VAL,
            train_images.rows()
        )));
    }
    if test_images.rows() != MNIST_TEST {
        return Err(Error::Input(format!(
            "expected {MNIST_TEST} test rows, found {}",
            test_images.rows()
        )));
    }
    let full = Dataset::new(train_images, train_labels)?;
    let train_idx: Vec<usize> = (0..MNIST_TRAIN).collect();
    let val_idx: Vec<usize> = (MNIST_TRAIN..MNIST_TRAIN + MNIST_VAL).collect();
    Ok(DatasetSplit {
        train: full.subset(&train_idx),
        val: full.subset(&val_idx),
        test: Dataset::new(test_images, test_labels)?,
    })
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let candidates = [
        stem.to_string(),
        format!("{stem}.gz"),
        stem.replacen("-idx", ".idx", 1),
        format!("{}.gz", stem.replacen("-idx", ".idx", 1)),
    ];
    candidates
        .iter()
        .map(|c| dir.join(c))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Input(format!("{stem} not found under {}", dir.display())))
}

/// Reads the four official MNIST files (optionally gzipped) from `dir`.
pub fn load_mnist(dir: &Path) -> Result<DatasetSplit> {
    let read = |stem: &str| -> Result<Vec<u8>> { Ok(fs::read(find_file(dir, stem)?)?) };
    make_splits(
        idx::parse_images(&read("train-images-idx3-ubyte")?)?,
        idx::parse_labels(&read("train-labels-idx1-ubyte")?)?,
        idx::parse_images(&read("t10k-images-idx3-ubyte")?)?,
        idx::parse_labels(&read("t10k-labels-idx1-ubyte")?)?,
    )
}

/// Writes a split as six IDX files (`{train,val,test}-{images,labels}.idx`).
///
/// Image files are written with a `1 × dim` image geometry unless `dim` is a
/// perfect square.
pub fn write_split_idx(split: &DatasetSplit, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, ds) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let d = ds.dim();
        let side = (d as f64).sqrt().round() as usize;
        let (rows, cols) = if side * side == d { (side, side) } else { (1, d) };
        let img = dir.join(format!("{name}-images.idx"));
        fs::write(&img, idx::encode_images(&ds.images, rows, cols)?)?;
        let lab = dir.join(format!("{name}-labels.idx"));
        fs::write(&lab, idx::encode_labels(&ds.labels))?;
        written.extend([img, lab]);
    }
    Ok(written)
}
