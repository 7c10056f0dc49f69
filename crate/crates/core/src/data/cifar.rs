//! CIFAR-10 / CIFAR-100 binary batches.
//!
//! CIFAR-10 records are 3073 bytes: label, then 3072 channel-major pixels.
//! CIFAR-100 records are 3074 bytes: coarse label, fine label, pixels. Only
//! the fine label is kept.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, LabeledSet};

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_size(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }
}

/// Loads and concatenates the given batch files; examples are `[3, 32, 32]`.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], kind: CifarKind) -> Result<LabeledSet, DataError> {
    let record = kind.record_size();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.len() % record != 0 {
            return Err(DataError::RecordSize {
                path: path.to_path_buf(),
                size: bytes.len() as u64,
                record: record as u64,
            });
        }
        for rec in bytes.chunks_exact(record) {
            let label = usize::from(rec[kind.label_bytes() - 1]);
            if label >= kind.classes() {
                return Err(DataError::Invalid(format!(
                    "{}: label {label} out of range",
                    path.display()
                )));
            }
            labels.push(label);
            data.extend(rec[kind.label_bytes()..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    LabeledSet::new(vec![3, 32, 32], data, labels, kind.classes())
}
