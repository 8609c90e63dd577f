//! Datasets: IDX file loading/writing, train/validation splits, batch
//! sampling and a synthetic blob generator for fast desk-scale experiments.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x} at byte 0, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at byte {offset}: expected {expected} bytes total, found {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {value} at index {index} exceeds maximum class {max}")]
    InvalidLabel {
        path: PathBuf,
        index: usize,
        value: u8,
        max: u8,
    },
    #[error("requested {requested} examples, dataset has {available}")]
    NotEnoughExamples { requested: usize, available: usize },
    #[error("{op}: {what}")]
    Invalid { op: &'static str, what: String },
}

/// A labelled image dataset with pixels normalized to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    images: Tensor<F>,
    labels: Vec<u8>,
    num_classes: usize,
    name: String,
}

/// One sampled training batch together with its one-hot label matrix.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    /// `[n, h, w]` images.
    pub images: Tensor<F>,
    /// `n` class labels.
    pub labels: Vec<u8>,
    /// `[n, d]` one-hot rows matching `labels`.
    pub onehot: Tensor<F>,
    /// Source indices into the dataset the batch was drawn from.
    pub indices: Vec<usize>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(
        images: Tensor<F>,
        labels: Vec<u8>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if images.rank() != 3 {
            return Err(DataError::Invalid {
                op: "new",
                what: format!("images must be [n, h, w], got shape {:?}", images.shape()),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(DataError::Invalid {
                op: "new",
                what: format!("num_classes {num_classes} out of range"),
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_hw(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn images(&self) -> &Tensor<F> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Copies the examples at `indices` into a new dataset, in order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self, DataError> {
        let (h, w) = self.image_hw();
        let stride = h * w;
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(DataError::NotEnoughExamples {
                    requested: i + 1,
                    available: self.len(),
                });
            }
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Ok(Self {
            images: Tensor::new(vec![indices.len(), h, w], data).expect("shape consistent"),
            labels,
            num_classes: self.num_classes,
            name: name.into(),
        })
    }

    /// First `n` examples, in file order.
    pub fn take_first(&self, n: usize) -> Result<Self, DataError> {
        if n > self.len() {
            return Err(DataError::NotEnoughExamples {
                requested: n,
                available: self.len(),
            });
        }
        let indices: Vec<usize> = (0..n).collect();
        self.subset(&indices, self.name.clone())
    }

    /// Seeded disjoint train/validation split: a permutation of the whole
    /// dataset is drawn once, the first `n_train` indices become the training
    /// set and the next `n_val` the validation set.
    pub fn split(
        &self,
        n_train: usize,
        n_val: usize,
        seed: u64,
    ) -> Result<(Self, Self), DataError> {
        let needed = n_train
            .checked_add(n_val)
            .ok_or(DataError::NotEnoughExamples {
                requested: usize::MAX,
                available: self.len(),
            })?;
        if needed > self.len() {
            return Err(DataError::NotEnoughExamples {
                requested: needed,
                available: self.len(),
            });
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let train = self.subset(&order[..n_train], format!("{}-train", self.name))?;
        let val = self.subset(&order[n_train..n_train + n_val], format!("{}-val", self.name))?;
        Ok((train, val))
    }

    /// Draws a batch of `n` examples. Without replacement each index appears
    /// at most once (partial Fisher–Yates); with replacement indices are
    /// drawn independently.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        replacement: bool,
    ) -> Result<Batch<F>, DataError> {
        if n == 0 {
            return Err(DataError::Invalid {
                op: "sample_batch",
                what: "batch size must be at least 1".into(),
            });
        }
        let indices = if replacement {
            (0..n).map(|_| rng.random_range(0..self.len())).collect()
        } else {
            if n > self.len() {
                return Err(DataError::NotEnoughExamples {
                    requested: n,
                    available: self.len(),
                });
            }
            let mut order: Vec<usize> = (0..self.len()).collect();
            for i in 0..n {
                let j = rng.random_range(i..order.len());
                order.swap(i, j);
            }
            order.truncate(n);
            order
        };
        self.batch_at(&indices)
    }

    /// Assembles a batch from explicit dataset indices.
    pub fn batch_at(&self, indices: &[usize]) -> Result<Batch<F>, DataError> {
        let subset = self.subset(indices, "batch")?;
        let onehot = one_hot(&subset.labels, self.num_classes);
        Ok(Batch {
            images: subset.images,
            labels: subset.labels,
            onehot,
            indices: indices.to_vec(),
        })
    }

    /// Copies the contiguous range `[start, start + len)` of images into a
    /// standalone `[len, h, w]` tensor (used for chunked full-set passes).
    pub fn images_range(&self, start: usize, len: usize) -> Result<Tensor<F>, DataError> {
        if start + len > self.len() {
            return Err(DataError::NotEnoughExamples {
                requested: start + len,
                available: self.len(),
            });
        }
        let (h, w) = self.image_hw();
        let stride = h * w;
        let data = self.images.data()[start * stride..(start + len) * stride].to_vec();
        Ok(Tensor::new(vec![len, h, w], data).expect("shape consistent"))
    }
}

/// One-hot encodes labels into an `[n, num_classes]` tensor.
pub fn one_hot<F: Scalar>(labels: &[u8], num_classes: usize) -> Tensor<F> {
    let mut out = Tensor::zeros(vec![labels.len(), num_classes]);
    for (i, &label) in labels.iter().enumerate() {
        out.data_mut()[i * num_classes + usize::from(label)] = F::one();
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_u32_be(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len(),
            expected: end,
            actual: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Loads an IDX image/label file pair (big-endian headers, u8 payload).
/// Pixels are scaled to `[0, 1]` by dividing by 255; labels must be 0–9.
pub fn load_idx<F: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<F>, DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let img_bytes = read_file(images_path)?;
    let magic = read_u32_be(&img_bytes, 0, images_path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let n = read_u32_be(&img_bytes, 4, images_path)? as usize;
    let h = read_u32_be(&img_bytes, 8, images_path)? as usize;
    let w = read_u32_be(&img_bytes, 12, images_path)? as usize;
    let expected = 16 + n * h * w;
    if img_bytes.len() != expected {
        return Err(DataError::Truncated {
            path: images_path.to_path_buf(),
            offset: img_bytes.len().min(expected),
            expected,
            actual: img_bytes.len(),
        });
    }

    let lab_bytes = read_file(labels_path)?;
    let magic = read_u32_be(&lab_bytes, 0, labels_path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let n_labels = read_u32_be(&lab_bytes, 4, labels_path)? as usize;
    let expected_lab = 8 + n_labels;
    if lab_bytes.len() != expected_lab {
        return Err(DataError::Truncated {
            path: labels_path.to_path_buf(),
            offset: lab_bytes.len().min(expected_lab),
            expected: expected_lab,
            actual: lab_bytes.len(),
        });
    }
    if n != n_labels {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }

    const NUM_CLASSES: usize = 10;
    let labels = lab_bytes[8..].to_vec();
    for (index, &value) in labels.iter().enumerate() {
        if usize::from(value) >= NUM_CLASSES {
            return Err(DataError::InvalidLabel {
                path: labels_path.to_path_buf(),
                index,
                value,
                max: (NUM_CLASSES - 1) as u8,
            });
        }
    }

    let data: Vec<F> = img_bytes[16..]
        .iter()
        .map(|&byte| F::cast(f64::from(byte) / 255.0))
        .collect();
    let images = Tensor::new(vec![n, h, w], data).expect("length checked above");

    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(images, labels, NUM_CLASSES, name)
}

/// Writes a dataset back out as an IDX image/label file pair. Pixels are
/// rescaled with `round(v * 255)`, the exact inverse of [`load_idx`] for
/// data that originated from bytes.
pub fn write_idx<F: Scalar>(
    dataset: &Dataset<F>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let (h, w) = dataset.image_hw();
    let n = dataset.len();

    let mut img_bytes = Vec::with_capacity(16 + n * h * w);
    img_bytes.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    img_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(h as u32).to_be_bytes());
    img_bytes.extend_from_slice(&(w as u32).to_be_bytes());
    for &v in dataset.images().data() {
        let byte = (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
        img_bytes.push(byte);
    }
    std::fs::write(images_path, &img_bytes).map_err(|source| DataError::Io {
        path: images_path.to_path_buf(),
        source,
    })?;

    let mut lab_bytes = Vec::with_capacity(8 + n);
    lab_bytes.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    lab_bytes.extend_from_slice(dataset.labels());
    std::fs::write(labels_path, &lab_bytes).map_err(|source| DataError::Io {
        path: labels_path.to_path_buf(),
        source,
    })
}

/// Generates a seeded synthetic dataset of Gaussian blobs rendered as
/// `h × w` images. Each class gets a random unit direction in pixel space;
/// its center sits at `0.5 + separation · noise_sigma / 2` along that
/// direction, and examples add isotropic `N(0, noise_sigma²)` noise before
/// being clamped to `[0, 1]`. `separation = 0` collapses every class onto
/// the same center; large values make classes linearly separable.
pub fn synthetic_blobs<F: Scalar>(
    classes: usize,
    hw: (usize, usize),
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset<F>, DataError> {
    if classes == 0 || per_class == 0 || hw.0 == 0 || hw.1 == 0 {
        return Err(DataError::Invalid {
            op: "synthetic_blobs",
            what: format!(
                "classes={classes}, per_class={per_class}, hw={hw:?} must all be non-zero"
            ),
        });
    }
    if classes > 256 {
        return Err(DataError::Invalid {
            op: "synthetic_blobs",
            what: format!("classes {classes} exceeds label range"),
        });
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(DataError::Invalid {
            op: "synthetic_blobs",
            what: format!("separation {separation} must be finite and non-negative"),
        });
    }
    const NOISE_SIGMA: f64 = 0.1;
    let (h, w) = hw;
    let dim = h * w;
    let radius = separation * NOISE_SIGMA / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut direction: Vec<f64> = (0..dim).map(|_| f64::standard_normal(&mut rng)).collect();
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut direction {
            *v = 0.5 + radius * (*v / norm);
        }
        centers.push(direction);
    }

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let v = (c + NOISE_SIGMA * f64::standard_normal(&mut rng)).clamp(0.0, 1.0);
                data.push(F::cast(v));
            }
            labels.push(class as u8);
        }
    }
    let images = Tensor::new(vec![n, h, w], data).expect("shape consistent");
    Dataset::new(images, labels, classes, "blobs")
}
