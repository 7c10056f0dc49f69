use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::losses::{softmax, TransferMode};
use crate::nn::Model;
use crate::tensor::Tensor;

/// Proxy examples evaluated per forward pass during extraction.
const EXTRACT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Producer {
    Server,
    Client(usize),
}

/// One model's outputs on the proxy set, row `k` for proxy example `k`.
/// Logits are raw; softening happens where they are consumed.
#[derive(Debug, Clone, PartialEq)]
pub struct Knowledge {
    pub logits: Option<Tensor>,
    pub embeddings: Option<Tensor>,
    pub producer: Producer,
}

impl Knowledge {
    pub fn rows(&self) -> usize {
        self.logits
            .as_ref()
            .or(self.embeddings.as_ref())
            .map_or(0, Tensor::rows)
    }

    /// Payload size with 8-byte reals.
    pub fn payload_bytes(&self) -> u64 {
        let n = self.logits.as_ref().map_or(0, Tensor::len) + self.embeddings.as_ref().map_or(0, Tensor::len);
        8 * n as u64
    }
}

/// Averaged client knowledge: mean outcome *distribution* per proxy row and
/// mean raw embedding per proxy row.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveKnowledge {
    pub probs: Option<Tensor>,
    pub embeddings: Option<Tensor>,
    pub contributors: Vec<usize>,
}

/// Single in-order pass over the proxy set; only the parts `mode` needs are kept.
pub fn extract_knowledge(model: &Model, proxy: &LabeledSet, mode: TransferMode, producer: Producer) -> Result<Knowledge> {
    if proxy.is_empty() {
        return Err(Error::Knowledge("empty proxy set".into()));
    }
    let mut logits = Vec::new();
    let mut embeddings = Vec::new();
    let order: Vec<usize> = (0..proxy.len()).collect();
    for chunk in order.chunks(EXTRACT_CHUNK) {
        let (x, _) = proxy.batch(chunk)?;
        let (e, z) = model.predict(&x)?;
        if mode.uses_outcomes() {
            logits.push(z);
        }
        if mode.uses_embeddings() {
            embeddings.push(e);
        }
    }
    let join = |parts: Vec<Tensor>| -> Result<Option<Tensor>> {
        if parts.is_empty() {
            return Ok(None);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_rows(&refs).map(Some)
    };
    Ok(Knowledge {
        logits: join(logits)?,
        embeddings: join(embeddings)?,
        producer,
    })
}

/// Unweighted mean over contributors, consumed in ascending producer order.
/// Logits are averaged after `softmax(·, tau)`; embeddings are averaged raw.
pub fn aggregate_knowledge(items: &[Knowledge], tau: f64) -> Result<CollectiveKnowledge> {
    let mut sorted: Vec<&Knowledge> = items.iter().collect();
    sorted.sort_by_key(|k| k.producer);
    let first = *sorted
        .first()
        .ok_or_else(|| Error::Knowledge("no knowledge to aggregate".into()))?;
    let describe = |k: &Knowledge| format!("{:?}", k.producer);
    for k in &sorted[1..] {
        let same_presence = k.logits.is_some() == first.logits.is_some()
            && k.embeddings.is_some() == first.embeddings.is_some();
        let same_shapes = k.logits.as_ref().map(Tensor::shape) == first.logits.as_ref().map(Tensor::shape)
            && k.embeddings.as_ref().map(Tensor::shape) == first.embeddings.as_ref().map(Tensor::shape);
        if !same_presence || !same_shapes {
            return Err(Error::Knowledge(format!(
                "knowledge from {} does not match {} in presence or shape",
                describe(k),
                describe(first)
            )));
        }
    }
    if first.logits.is_none() && first.embeddings.is_none() {
        return Err(Error::Knowledge(format!("knowledge from {} is empty", describe(first))));
    }
    let n = sorted.len() as f64;
    let mean = |get: &dyn Fn(&Knowledge) -> Option<Tensor>| -> Result<Option<Tensor>> {
        let mut acc: Option<Tensor> = None;
        for k in &sorted {
            let Some(t) = get(k) else { return Ok(None) };
            match acc.as_mut() {
                None => acc = Some(t),
                Some(a) => a.add_scaled(&t, 1.0)?,
            }
        }
        Ok(acc.map(|mut a| {
            a.scale(1.0 / n);
            a
        }))
    };
    let probs = mean(&|k| k.logits.as_ref().map(|z| softmax(z, tau)))?;
    let embeddings = mean(&|k| k.embeddings.clone())?;
    let contributors = sorted
        .iter()
        .filter_map(|k| match k.producer {
            Producer::Client(id) => Some(id),
            Producer::Server => None,
        })
        .collect();
    Ok(CollectiveKnowledge {
        probs,
        embeddings,
        contributors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(id: usize, rows: &[Vec<f64>]) -> Knowledge {
        Knowledge {
            logits: Some(Tensor::from_rows(rows).unwrap()),
            embeddings: None,
            producer: Producer::Client(id),
        }
    }

    #[test]
    fn single_client_is_its_softmax() {
        let k = logits(3, &[vec![1.0, 2.0, 0.5]]);
        let agg = aggregate_knowledge(std::slice::from_ref(&k), 2.0).unwrap();
        assert_eq!(agg.probs.unwrap(), softmax(k.logits.as_ref().unwrap(), 2.0));
        assert_eq!(agg.contributors, vec![3]);
    }

    #[test]
    fn opposite_one_hots_average_to_half() {
        let a = logits(0, &[vec![60.0, 0.0]]);
        let b = logits(1, &[vec![0.0, 60.0]]);
        let agg = aggregate_knowledge(&[b, a], 1.0).unwrap();
        let p = agg.probs.unwrap();
        assert!(p.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert_eq!(agg.contributors, vec![0, 1]);
    }

    #[test]
    fn mean_rows_are_distributions() {
        let a = logits(0, &[vec![0.3, -2.0, 1.0], vec![4.0, 0.0, 0.0]]);
        let b = logits(1, &[vec![1.0, 1.0, 1.0], vec![-3.0, 2.0, 0.1]]);
        let p = aggregate_knowledge(&[a, b], 1.0).unwrap().probs.unwrap();
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatch_names_producers() {
        let a = logits(0, &[vec![0.0, 1.0]]);
        let b = logits(4, &[vec![0.0, 1.0, 2.0]]);
        let err = aggregate_knowledge(&[a, b], 1.0).unwrap_err().to_string();
        assert!(err.contains("Client(4)") && err.contains("Client(0)"), "{err}");
        assert!(aggregate_knowledge(&[], 1.0).is_err());
    }
}
