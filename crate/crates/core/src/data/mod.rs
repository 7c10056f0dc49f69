//! Dataset ingestion, non-i.i.d. partitioning and batching.

mod batches;
mod cifar;
mod idx;
mod partition;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub use batches::{batches, Batches};
pub use cifar::{load_cifar_binary, CifarKind};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{partition_noniid, ClientData, Partition, PartitionManifest, PartitionSpec};
pub use synth::SyntheticSpec;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: wrong magic number, expected {expected:#010x}, found {found:#010x}")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: size {size} is not a multiple of the {record}-byte record size")]
    RecordSize { path: PathBuf, size: u64, record: u64 },
    #[error("class {class}: need {needed} examples, only {available} available")]
    InsufficientClass {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("empty dataset")]
    Empty,
    #[error("invalid data argument: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A set of examples with class labels in `[0, classes)`.
///
/// Examples are stored contiguously; the per-example shape excludes the batch
/// axis. Empty sets are allowed (a client may end up with no private data).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    example_shape: Vec<usize>,
    data: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledSet {
    pub fn new(example_shape: Vec<usize>, data: Vec<f64>, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        let width: usize = example_shape.iter().product();
        if example_shape.is_empty() || width == 0 {
            return Err(DataError::Invalid(format!("example shape {example_shape:?}")));
        }
        if data.len() != width * labels.len() {
            return Err(DataError::CountMismatch {
                images: data.len() / width,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {bad} >= class count {classes}")));
        }
        Ok(Self {
            example_shape,
            data,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example_shape(&self) -> &[usize] {
        &self.example_shape
    }

    pub fn example(&self, i: usize) -> &[f64] {
        let w = self.example_width();
        &self.data[i * w..(i + 1) * w]
    }

    fn example_width(&self) -> usize {
        self.example_shape.iter().product()
    }

    /// Stacks the examples at `indices` into a `[len, ...example_shape]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>), DataError> {
        if indices.is_empty() {
            return Err(DataError::Empty);
        }
        let w = self.example_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.example_shape);
        let t = Tensor::new(shape, data).expect("consistent by construction");
        Ok((t, labels))
    }

    /// All examples as one batch.
    pub fn examples(&self) -> Result<Tensor, DataError> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.batch(&all)?.0)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let w = self.example_width();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.example(i));
        }
        LabeledSet {
            example_shape: self.example_shape.clone(),
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// Concatenation in argument order.
    pub fn concat(parts: &[&LabeledSet]) -> Result<LabeledSet, DataError> {
        let first = parts.first().ok_or(DataError::Empty)?;
        let mut out = LabeledSet {
            example_shape: first.example_shape.clone(),
            data: Vec::new(),
            labels: Vec::new(),
            classes: first.classes,
        };
        for p in parts {
            if p.example_shape != out.example_shape || p.classes != out.classes {
                return Err(DataError::Invalid("concatenating incompatible sets".into()));
            }
            out.data.extend_from_slice(&p.data);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    /// Reinterprets every example with a new shape of equal element count.
    pub fn reshaped(mut self, example_shape: Vec<usize>) -> Result<LabeledSet, DataError> {
        if example_shape.iter().product::<usize>() != self.example_width() || example_shape.contains(&0) {
            return Err(DataError::Invalid(format!(
                "cannot reshape examples of {:?} to {example_shape:?}",
                self.example_shape
            )));
        }
        self.example_shape = example_shape;
        Ok(self)
    }

    /// Indices of examples per class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}
