//! Client and server training steps.

use crate::data::{Batches, LabeledSet};
use crate::error::{Error, Result};
use crate::losses::{cross_entropy, global_cdkt_loss, kd_loss, kd_loss_from_probs, on_device_loss, TransferConfig};
use crate::nn::Model;
use crate::rng;
use crate::tensor::Tensor;

use super::{CollectiveKnowledge, Knowledge};

/// What a client learns from besides its private labels.
#[derive(Debug, Clone, Copy)]
pub enum LocalObjective<'a> {
    /// Cross-entropy on private data only.
    Plain,
    /// On-device knowledge transfer toward the server's proxy knowledge.
    Cdkt(&'a Knowledge),
    /// Student loss with the server's proxy logits as teacher.
    Kd(&'a Knowledge),
}

/// Hyperparameters of one client's local pass.
#[derive(Debug, Clone)]
pub struct LocalSettings<'a> {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub transfer: &'a TransferConfig,
    pub seed: u64,
    pub round: usize,
    pub client: usize,
}

fn rows_of(t: &Tensor, range: std::ops::Range<usize>) -> Tensor {
    let idx: Vec<usize> = range.collect();
    t.select_rows(&idx)
}

fn teacher_rows(t: Option<&Tensor>, idx: &[usize]) -> Option<Tensor> {
    t.map(|t| t.select_rows(idx))
}

/// Runs `epochs` passes over the client's private data.
///
/// Private batches drive the loop; each step pairs one with the next proxy
/// batch from a cycling sampler. With `alpha == 0` or the plain objective the
/// proxy set is never touched, so the trajectory equals local-only SGD.
/// Returns `false` (and trains nothing) when the private set is empty.
pub fn client_local_update(
    model: &mut Model,
    train: &LabeledSet,
    proxy: &LabeledSet,
    objective: LocalObjective<'_>,
    s: &LocalSettings<'_>,
) -> Result<bool> {
    if train.is_empty() {
        return Ok(false);
    }
    let (round, client) = (s.round as u64, s.client as u64);
    let mut private = Batches::new(
        train.len(),
        s.batch_size,
        rng::stream(s.seed, "private", &[round, client]),
        true,
    )?;
    let steps = s.epochs * private.per_epoch();
    let transfer_active = !matches!(objective, LocalObjective::Plain) && s.transfer.alpha > 0.0;
    let mut proxy_batches = if transfer_active {
        if let LocalObjective::Cdkt(k) | LocalObjective::Kd(k) = objective {
            if k.rows() != proxy.len() {
                return Err(Error::Knowledge(format!(
                    "server knowledge has {} rows, proxy has {}",
                    k.rows(),
                    proxy.len()
                )));
            }
        }
        Some(Batches::new(
            proxy.len(),
            s.batch_size,
            rng::stream(s.seed, "proxy", &[round, client]),
            true,
        )?)
    } else {
        None
    };

    for _ in 0..steps {
        let idx = private.next().expect("cycling sampler");
        let (x, y) = train.batch(&idx)?;
        model.zero_grads();
        let Some(proxy_batches) = proxy_batches.as_mut() else {
            let (_, z) = model.forward(&x)?;
            let ce = cross_entropy(&z, &y)?;
            model.backward(&ce.grad, None)?;
            model.sgd_step(s.lr)?;
            continue;
        };

        let ridx = proxy_batches.next().expect("cycling sampler");
        let (xr, yr) = proxy.batch(&ridx)?;
        let bp = idx.len();
        let total = bp + ridx.len();
        let (e, z) = model.forward(&Tensor::concat_rows(&[&x, &xr])?)?;
        let (z_n, z_r) = (rows_of(&z, 0..bp), rows_of(&z, bp..total));
        let (dz, de) = match objective {
            LocalObjective::Cdkt(k) => {
                let e_r = rows_of(&e, bp..total);
                let tz = teacher_rows(k.logits.as_ref(), &ridx);
                let te = teacher_rows(k.embeddings.as_ref(), &ridx);
                let l = on_device_loss(&z_n, &y, &z_r, Some(&e_r), tz.as_ref(), te.as_ref(), &yr, s.transfer)?;
                let dz = Tensor::concat_rows(&[&l.grad_private_logits, &l.grad_proxy_logits])?;
                let de = match l.grad_proxy_embeddings {
                    Some(g) => {
                        let zeros = Tensor::zeros(&[bp, e.row_len()]);
                        Some(Tensor::concat_rows(&[&zeros, &g])?)
                    }
                    None => None,
                };
                (dz, de)
            }
            LocalObjective::Kd(k) => {
                let tz = teacher_rows(k.logits.as_ref(), &ridx)
                    .ok_or_else(|| Error::Knowledge("distillation needs server logits".into()))?;
                let ce = cross_entropy(&z_n, &y)?;
                let mut kd = kd_loss(&tz, &z_r, s.transfer.tau)?;
                kd.grad.scale(s.transfer.alpha);
                (Tensor::concat_rows(&[&ce.grad, &kd.grad])?, None)
            }
            LocalObjective::Plain => unreachable!("plain objective never samples the proxy"),
        };
        model.backward(&dz, de.as_ref())?;
        model.sgd_step(s.lr)?;
    }
    Ok(true)
}

/// How the server learns on the proxy set.
#[derive(Debug, Clone, Copy)]
pub enum ServerObjective<'a> {
    /// Cross-entropy fine-tuning only.
    Supervised,
    /// Global knowledge transfer toward the averaged client knowledge.
    Cdkt(&'a CollectiveKnowledge),
    /// Cross-entropy plus `beta * tau^2 * KL(mean client outcome, server)`.
    Kd(&'a CollectiveKnowledge),
}

#[derive(Debug, Clone)]
pub struct ServerSettings<'a> {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub transfer: &'a TransferConfig,
    pub seed: u64,
    pub round: usize,
}

/// `epochs` passes over the proxy set in seeded batches. Collective knowledge
/// rows are gathered with the same indices as the batch.
pub fn server_update(model: &mut Model, proxy: &LabeledSet, objective: ServerObjective<'_>, s: &ServerSettings<'_>) -> Result<()> {
    if s.epochs == 0 {
        return Ok(());
    }
    if let ServerObjective::Cdkt(k) | ServerObjective::Kd(k) = objective {
        let rows = k.probs.as_ref().or(k.embeddings.as_ref()).map_or(0, Tensor::rows);
        if rows != proxy.len() {
            return Err(Error::Knowledge(format!(
                "collective knowledge has {rows} rows, proxy has {}",
                proxy.len()
            )));
        }
    }
    let mut sampler = Batches::new(
        proxy.len(),
        s.batch_size,
        rng::stream(s.seed, "server", &[s.round as u64]),
        true,
    )?;
    let steps = s.epochs * sampler.per_epoch();
    for _ in 0..steps {
        let idx = sampler.next().expect("cycling sampler");
        let (x, y) = proxy.batch(&idx)?;
        model.zero_grads();
        let (e, z) = model.forward(&x)?;
        match objective {
            ServerObjective::Supervised => {
                let ce = cross_entropy(&z, &y)?;
                model.backward(&ce.grad, None)?;
            }
            ServerObjective::Cdkt(k) => {
                let probs = teacher_rows(k.probs.as_ref(), &idx);
                let emb = teacher_rows(k.embeddings.as_ref(), &idx);
                let l = global_cdkt_loss(&z, Some(&e), probs.as_ref(), emb.as_ref(), &y, s.transfer)?;
                model.backward(&l.grad_logits, l.grad_embeddings.as_ref())?;
            }
            ServerObjective::Kd(k) => {
                let probs = teacher_rows(k.probs.as_ref(), &idx)
                    .ok_or_else(|| Error::Knowledge("distillation needs client outcomes".into()))?;
                let mut ce = cross_entropy(&z, &y)?;
                let kd = kd_loss_from_probs(&probs, &z, s.transfer.tau)?;
                ce.grad.add_scaled(&kd.grad, s.transfer.beta)?;
                model.backward(&ce.grad, None)?;
            }
        }
        model.sgd_step(s.lr)?;
    }
    Ok(())
}

/// Parameter average in shifted form `p0 + sum_i w_i (p_i - p0)` with `p0` the
/// first entry and weights normalized to one. Identical inputs come back
/// unchanged bit for bit, and a single input is returned as is.
pub fn average_params(params: &[Tensor], weights: Option<&[f64]>) -> Result<Tensor> {
    let first = params
        .first()
        .ok_or_else(|| Error::State("averaging zero parameter vectors".into()))?;
    if let Some(w) = weights {
        if w.len() != params.len() {
            return Err(Error::shape("average weights", &[params.len()], &[w.len()]));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("averaging weights must be non-negative with a positive sum".into()));
        }
    }
    let total: f64 = weights.map_or(params.len() as f64, |w| w.iter().sum());
    let mut out = first.clone();
    for (i, p) in params.iter().enumerate().skip(1) {
        if p.shape() != first.shape() {
            return Err(Error::shape("average_params", first.shape(), p.shape()));
        }
        let w = weights.map_or(1.0, |w| w[i]) / total;
        for ((o, &v), &base) in out.data_mut().iter_mut().zip(p.data()).zip(first.data()) {
            *o += w * (v - base);
        }
    }
    Ok(out)
}
