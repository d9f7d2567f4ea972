//! Dataset provisioning: seeded Gaussian blob generation, IDX ingestion,
//! and shuffled batching. Everything is deterministic per seed so two runs
//! agree bit for bit.

use crate::error::{EekdError, Result};
use crate::rng::{GaussianStream, Rng};
use crate::tensor::Tensor;
use byteorder::{BigEndian, ReadBytesExt};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled classification data. Inputs are standardized per dimension at
/// construction; labels index `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(EekdError::InvalidConfig(
                "dataset must contain at least one sample".into(),
            ));
        }
        if inputs.rows() != labels.len() {
            return Err(EekdError::DimensionMismatch {
                axis: "dataset rows vs labels",
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(EekdError::InvalidConfig(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// One shuffled slice of a dataset: the original row indices, the selected
/// rows, their integer labels, and the labels as one-hot rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub onehot: Tensor,
}

/// `K` Gaussian clusters with means on a radius-3 circle in the first two
/// dimensions (`mean_k = 3 (cos 2 pi k / K, sin 2 pi k / K, 0, ...)`) and
/// isotropic standard deviation `noise`. Sample `i` belongs to class
/// `i % K`; coordinates are drawn sample-major, dimension-minor from one
/// Gaussian stream, then the whole set is standardized per dimension.
pub fn gen_blobs(
    seed: u64,
    n: usize,
    num_classes: usize,
    dim: usize,
    noise: f64,
) -> Result<Dataset> {
    if num_classes == 0 {
        return Err(EekdError::InvalidConfig(
            "num_classes must be positive".into(),
        ));
    }
    if n == 0 || !n.is_multiple_of(num_classes) {
        return Err(EekdError::InvalidConfig(format!(
            "sample count {n} must be a positive multiple of {num_classes} classes"
        )));
    }
    if dim < 2 {
        return Err(EekdError::InvalidConfig(format!(
            "cluster means span two dimensions; dim {dim} is too small"
        )));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(EekdError::InvalidConfig(format!(
            "noise must be non-negative, got {noise}"
        )));
    }

    let mut means = vec![vec![0.0; dim]; num_classes];
    for (k, mean) in means.iter_mut().enumerate() {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / num_classes as f64;
        mean[0] = 3.0 * angle.cos();
        mean[1] = 3.0 * angle.sin();
    }

    let mut gauss = GaussianStream::new(seed);
    let mut data = vec![0.0; n * dim];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % num_classes;
        labels.push(k);
        for d in 0..dim {
            data[i * dim + d] = means[k][d] + noise * gauss.sample();
        }
    }

    standardize(&mut data, n, dim);
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, num_classes)
}

/// Parse an IDX image/label pair (big-endian headers, unsigned byte
/// payload). Pixels scale to `[0, 1]` and are then standardized per
/// dimension; the class count is one past the largest label.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = images.read_u32::<BigEndian>()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(EekdError::IdxMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = images.read_u32::<BigEndian>()? as usize;
    let rows = images.read_u32::<BigEndian>()? as usize;
    let cols = images.read_u32::<BigEndian>()? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; n * dim];
    images.read_exact(&mut pixels)?;

    let mut labels_file = BufReader::new(File::open(labels_path)?);
    let magic = labels_file.read_u32::<BigEndian>()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(EekdError::IdxMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let label_count = labels_file.read_u32::<BigEndian>()? as usize;
    if label_count != n {
        return Err(EekdError::IdxCountMismatch {
            images: n,
            labels: label_count,
        });
    }
    let mut raw_labels = vec![0u8; label_count];
    labels_file.read_exact(&mut raw_labels)?;

    let mut data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    standardize(&mut data, n, dim);
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, num_classes)
}

/// Shift each dimension to zero mean and unit variance over the whole set
/// (population variance). A constant dimension stays at zero instead of
/// dividing by zero.
fn standardize(data: &mut [f64], n: usize, dim: usize) {
    for d in 0..dim {
        let mut mean = 0.0;
        for i in 0..n {
            mean += data[i * dim + d];
        }
        mean /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let centered = data[i * dim + d] - mean;
            var += centered * centered;
        }
        var /= n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            data[i * dim + d] = (data[i * dim + d] - mean) / std;
        }
    }
}

/// Split `dataset` into contiguous batches after a Fisher–Yates shuffle
/// seeded with `epoch_seed`. The last batch keeps any remainder, so the
/// union of batches is the dataset exactly once.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(EekdError::InvalidConfig(
            "batch_size must be positive".into(),
        ));
    }
    let n = dataset.len();
    let dim = dataset.input_dim();
    let k = dataset.num_classes();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(epoch_seed).shuffle(&mut order);

    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let b = chunk.len();
        let mut inputs = vec![0.0; b * dim];
        let mut onehot = vec![0.0; b * k];
        let mut labels = Vec::with_capacity(b);
        for (row, &idx) in chunk.iter().enumerate() {
            inputs[row * dim..(row + 1) * dim].copy_from_slice(dataset.inputs.row(idx));
            let label = dataset.labels[idx];
            labels.push(label);
            onehot[row * k + label] = 1.0;
        }
        batches.push(Batch {
            indices: chunk.to_vec(),
            inputs: Tensor::matrix(b, dim, inputs)?,
            labels,
            onehot: Tensor::matrix(b, k, onehot)?,
        });
    }
    Ok(batches)
}
