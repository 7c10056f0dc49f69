//! Gaussian class blobs for download-free experiments.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledSet};
use crate::rng;

/// Unit-variance isotropic blobs. When `dim >= classes` each class mean sits
/// on its own (randomly chosen, randomly signed) axis, so every pair of means
/// is exactly `separation` standard deviations apart. With fewer dimensions
/// than classes the means are random normal vectors scaled by `separation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(classes: usize, per_class: usize, dim: usize, seed: u64) -> Self {
        Self {
            classes,
            per_class,
            dim,
            separation: 6.0,
            seed,
        }
    }

    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(self.seed, "synth-means", &[]);
        if self.dim >= self.classes {
            let mut axes: Vec<usize> = (0..self.dim).collect();
            axes.shuffle(&mut rng);
            let r = self.separation / std::f64::consts::SQRT_2;
            (0..self.classes)
                .map(|c| {
                    let mut m = vec![0.0; self.dim];
                    m[axes[c]] = if rng.random_bool(0.5) { r } else { -r };
                    m
                })
                .collect()
        } else {
            (0..self.classes)
                .map(|_| {
                    (0..self.dim)
                        .map(|_| self.separation * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        }
    }

    /// Examples are grouped by class: `per_class` of class 0, then class 1, ...
    pub fn generate(&self) -> Result<LabeledSet, DataError> {
        if self.classes < 2 {
            return Err(DataError::Invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.per_class == 0 || self.dim == 0 {
            return Err(DataError::Invalid("per_class and dim must be positive".into()));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(DataError::Invalid(format!("separation must be positive, got {}", self.separation)));
        }
        let means = self.class_means();
        let mut rng = rng::stream(self.seed, "synth-samples", &[]);
        let mut data = Vec::with_capacity(self.classes * self.per_class * self.dim);
        let mut labels = Vec::with_capacity(self.classes * self.per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..self.per_class {
                data.extend(mean.iter().map(|m| m + rng.sample::<f64, _>(StandardNormal)));
                labels.push(c);
            }
        }
        LabeledSet::new(vec![self.dim], data, labels, self.classes)
    }
}
