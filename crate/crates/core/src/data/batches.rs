use rand::seq::SliceRandom;

use super::{DataError, LabeledSet};
use crate::rng::{self, SimRng};

/// Mini-batch index sampler. Each epoch is a fresh seeded shuffle and the final
/// short batch is kept. Without `cycle` the iterator ends after one epoch; with
/// it, epochs repeat forever.
#[derive(Debug, Clone)]
pub struct Batches {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    cycle: bool,
    rng: SimRng,
    done: bool,
}

impl Batches {
    pub fn new(len: usize, batch_size: usize, rng: SimRng, cycle: bool) -> Result<Self, DataError> {
        if len == 0 {
            return Err(DataError::Empty);
        }
        if batch_size == 0 {
            return Err(DataError::Invalid("batch size must be at least 1".into()));
        }
        let mut b = Self {
            order: (0..len).collect(),
            pos: 0,
            batch_size,
            cycle,
            rng,
            done: false,
        };
        b.order.shuffle(&mut b.rng);
        Ok(b)
    }

    pub fn per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if self.pos >= self.order.len() {
            if !self.cycle {
                self.done = true;
                return None;
            }
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

pub fn batches(set: &LabeledSet, batch_size: usize, seed: u64, cycle: bool) -> Result<Batches, DataError> {
    Batches::new(set.len(), batch_size, rng::stream(seed, "batches", &[]), cycle)
}
