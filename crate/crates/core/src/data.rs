//! MNIST ingestion and task construction.
//!
//! IDX files are read raw or gzip-compressed. Pixels are scaled to `[0, 1]`
//! as `byte / 255`. Tasks are built either by permuting pixel positions with a
//! seeded bijection (every example of a task shares one permutation) or by
//! keeping only some digit classes. Labels always keep their 0–9 values.

use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const IMAGE_SIDE: usize = 28;
pub const INPUT_DIM: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Standard file stems; each may also carry a `.gz` suffix on disk.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Inputs `[n × 784]` in `[0, 1]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` examples (all of them if `n` is larger).
    pub fn head(&self, n: usize) -> Split {
        let n = n.min(self.len());
        Split {
            inputs: self.inputs.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
        }
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn filter_classes(&self, classes: &[usize]) -> Split {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&rows)
    }

    fn permuted(&self, perm: &Permutation) -> Split {
        Split {
            inputs: self.inputs.select(Axis(1), perm.indices()),
            labels: self.labels.clone(),
        }
    }
}

/// The official MNIST train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Mnist {
    pub train: Split,
    pub test: Split,
}

impl Mnist {
    /// Loads the four standard files from `dir`, accepting either raw or
    /// `.gz` names.
    pub fn load_dir(dir: &Path) -> Result<Mnist> {
        let find = |stem: &str| -> Result<PathBuf> {
            let raw = dir.join(stem);
            if raw.is_file() {
                return Ok(raw);
            }
            let gz = dir.join(format!("{stem}.gz"));
            if gz.is_file() {
                return Ok(gz);
            }
            Err(Error::io(
                raw,
                io::Error::new(io::ErrorKind::NotFound, "MNIST file not found (raw or .gz)"),
            ))
        };
        Ok(Mnist {
            train: load_mnist(&find(TRAIN_IMAGES)?, &find(TRAIN_LABELS)?)?,
            test: load_mnist(&find(TEST_IMAGES)?, &find(TEST_LABELS)?)?,
        })
    }

    /// Keeps the first `train` training and `test` test examples.
    pub fn subsample(&self, train: Option<usize>, test: Option<usize>) -> Mnist {
        Mnist {
            train: train.map_or_else(|| self.train.clone(), |n| self.train.head(n)),
            test: test.map_or_else(|| self.test.clone(), |n| self.test.head(n)),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        return Ok(out);
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated(path, "header"))
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::io(
        path,
        io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated {what}")),
    )
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("magic number {magic:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Reads an IDX image file and its matching label file.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<Split> {
    let images = read_file(images_path)?;
    check_magic(&images, IMAGES_MAGIC, images_path)?;
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Format {
            path: images_path.to_owned(),
            reason: format!("images are {rows}×{cols}, expected 28×28"),
        });
    }
    let pixels = images
        .get(16..16 + count * INPUT_DIM)
        .ok_or_else(|| truncated(images_path, "pixel data"))?;

    let labels = read_file(labels_path)?;
    check_magic(&labels, LABELS_MAGIC, labels_path)?;
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = labels
        .get(8..8 + label_count)
        .ok_or_else(|| truncated(labels_path, "label data"))?;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {label_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    if let Some(bad) = label_bytes.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Format {
            path: labels_path.to_owned(),
            reason: format!("label {bad} is not a digit"),
        });
    }

    let inputs = Array2::from_shape_vec(
        (count, INPUT_DIM),
        pixels.iter().map(|&p| p as f64 / 255.0).collect(),
    )
    .expect("length checked");
    Ok(Split {
        inputs,
        labels: label_bytes.iter().map(|&l| l as usize).collect(),
    })
}

/// Bijection on pixel positions; `output[i] = input[indices[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    indices: Vec<usize>,
    seed: Option<u64>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
            seed: None,
        }
    }

    /// Fisher–Yates shuffle of `0..n` driven by the seeded ChaCha8 stream:
    /// for `i` from `n−1` down to `1`, swap `i` with a uniform `j ∈ [0, i]`.
    pub fn from_seed(n: usize, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut indices: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i as u64) as usize;
            indices.swap(i, j);
        }
        Self {
            indices,
            seed: Some(seed),
        }
    }

    pub fn from_indices(indices: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; indices.len()];
        for &i in &indices {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidInput(format!(
                    "index {i} breaks the bijection on 0..{}",
                    indices.len()
                )));
            }
        }
        Ok(Self {
            indices,
            seed: None,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_identity(&self) -> bool {
        self.indices.iter().enumerate().all(|(i, &j)| i == j)
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        self.indices.iter().map(|&j| row[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskDescriptor {
    /// `seed: None` is the identity permutation.
    Permuted { seed: Option<u64> },
    Split { classes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub train: Split,
    pub test: Split,
    pub descriptor: TaskDescriptor,
    pub num_classes: usize,
}

/// Applies one permutation to every train and test image.
pub fn make_permuted_task(base: &Mnist, perm: &Permutation) -> Result<TaskDataset> {
    if perm.indices().len() != base.train.inputs.ncols() {
        return Err(Error::Shape(format!(
            "permutation of {} positions for {}-pixel images",
            perm.indices().len(),
            base.train.inputs.ncols()
        )));
    }
    Ok(TaskDataset {
        train: base.train.permuted(perm),
        test: base.test.permuted(perm),
        descriptor: TaskDescriptor::Permuted { seed: perm.seed() },
        num_classes: NUM_CLASSES,
    })
}

/// Keeps only examples whose label is in `classes`.
pub fn make_split_task(base: &Mnist, classes: &[usize]) -> Result<TaskDataset> {
    if classes.is_empty() {
        return Err(Error::InvalidInput("split task needs at least one class".into()));
    }
    if let Some(bad) = classes.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::InvalidInput(format!("class {bad} is not a digit")));
    }
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    Ok(TaskDataset {
        train: base.train.filter_classes(&classes),
        test: base.test.filter_classes(&classes),
        descriptor: TaskDescriptor::Split { classes },
        num_classes: NUM_CLASSES,
    })
}
