//! Objectives and distances with exact gradients.
//!
//! Every loss is a mean over its batch. Distance functions take the target
//! (teacher) first and the learner second; gradients are only ever returned
//! for the learner side. Teacher-side tensors are constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities before any logarithm.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Norm2,
    Kl,
    Js,
}

impl DistanceKind {
    pub fn short(self) -> &'static str {
        match self {
            DistanceKind::Norm2 => "N",
            DistanceKind::Kl => "KL",
            DistanceKind::Js => "JS",
        }
    }
}

/// Which knowledge is exchanged: embeddings only, outcomes only, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Rep,
    Full,
    #[serde(rename = "repfull")]
    RepFull,
}

impl TransferMode {
    pub fn uses_embeddings(self) -> bool {
        matches!(self, TransferMode::Rep | TransferMode::RepFull)
    }

    pub fn uses_outcomes(self) -> bool {
        matches!(self, TransferMode::Full | TransferMode::RepFull)
    }

    pub fn name(self) -> &'static str {
        match self {
            TransferMode::Rep => "rep",
            TransferMode::Full => "full",
            TransferMode::RepFull => "repfull",
        }
    }
}

/// Trade-off and shape parameters of the knowledge-transfer objectives.
///
/// `mode` selects the terms of the server (global) regularizer, `local_mode`
/// those of the on-device regularizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub mode: TransferMode,
    pub local_mode: TransferMode,
    pub d_global: DistanceKind,
    pub d_local: DistanceKind,
    /// Weight of the on-device regularizer.
    pub alpha: f64,
    /// Weight of the server regularizer.
    pub beta: f64,
    /// Share of ground-truth labels in the mixed outcome target.
    pub lambda: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            mode: TransferMode::RepFull,
            local_mode: TransferMode::RepFull,
            d_global: DistanceKind::Kl,
            d_local: DistanceKind::Norm2,
            alpha: 0.5,
            beta: 0.5,
            lambda: 0.5,
            tau: 1.0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::Config(format!("{name} out of range: {v}"));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(bad("alpha", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(bad("beta", self.beta));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(bad("lambda", self.lambda));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(bad("tau", self.tau));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient w.r.t. the learner-side input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

fn check_2d(t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::shape(what, &[0, 0], t.shape()));
    }
    Ok(())
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    check_2d(a, what)?;
    if a.shape() != b.shape() {
        return Err(Error::shape(what, a.shape(), b.shape()));
    }
    Ok(())
}

/// Row-wise `exp((z - max) / tau) / sum`.
pub fn softmax(z: &Tensor, tau: f64) -> Tensor {
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / tau).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Pulls a gradient w.r.t. `q = softmax(z, tau)` back to `z`.
pub fn softmax_backward(q: &Tensor, grad_q: &Tensor, tau: f64) -> Tensor {
    let mut out = grad_q.clone();
    for i in 0..q.rows() {
        let qi = q.row(i);
        let dot: f64 = qi.iter().zip(grad_q.row(i)).map(|(a, b)| a * b).sum();
        for (o, &qv) in out.row_mut(i).iter_mut().zip(qi) {
            *o = qv * (*o - dot) / tau;
        }
    }
    out
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() || classes == 0 {
        return Err(Error::shape("one_hot", &[1, 1], &[labels.len(), classes]));
    }
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Config(format!("label {l} >= class count {classes}")));
        }
        t.row_mut(i)[l] = 1.0;
    }
    Ok(t)
}

/// Mean of `-ln softmax(z)[y]`; gradient `(softmax(z) - onehot(y)) / B`.
pub fn cross_entropy(z: &Tensor, y: &[usize]) -> Result<LossGrad> {
    check_2d(z, "cross_entropy logits")?;
    let (b, c) = (z.rows(), z.shape()[1]);
    if y.len() != b {
        return Err(Error::shape("cross_entropy labels", &[b], &[y.len()]));
    }
    let mut grad = softmax(z, 1.0);
    let mut total = 0.0;
    for (i, &label) in y.iter().enumerate() {
        if label >= c {
            return Err(Error::Config(format!("label {label} >= class count {c}")));
        }
        let row = z.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        grad.row_mut(i)[label] -= 1.0;
    }
    let bf = b as f64;
    grad.scale(1.0 / bf);
    Ok(LossGrad {
        value: total / bf,
        grad,
    })
}

/// Mean over rows of the (unsquared) Euclidean distance `||a_i - b_i||`.
/// Gradient w.r.t. `a`; zero at coincident rows.
pub fn dist_norm2(a: &Tensor, b: &Tensor) -> Result<LossGrad> {
    same_shape(a, b, "dist_norm2")?;
    let n = a.rows() as f64;
    let mut grad = Tensor::zeros(a.shape());
    let mut total = 0.0;
    for i in 0..a.rows() {
        let (ar, br) = (a.row(i), b.row(i));
        let norm = ar.iter().zip(br).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        total += norm;
        if norm > 0.0 {
            for ((g, x), y) in grad.row_mut(i).iter_mut().zip(ar).zip(br) {
                *g = (x - y) / (norm * n);
            }
        }
    }
    Ok(LossGrad {
        value: total / n,
        grad,
    })
}

#[inline]
fn ln_clamped(v: f64) -> f64 {
    v.max(LOG_EPS).ln()
}

/// Mean over rows of `sum_c p_c ln(p_c / q_c)`. `p` is the target, `q` the
/// learner; gradient w.r.t. `q`.
pub fn dist_kl(p: &Tensor, q: &Tensor) -> Result<LossGrad> {
    same_shape(p, q, "dist_kl")?;
    let n = p.rows() as f64;
    let mut grad = Tensor::zeros(q.shape());
    let mut total = 0.0;
    for ((g, &pv), &qv) in grad.data_mut().iter_mut().zip(p.data()).zip(q.data()) {
        if pv > 0.0 {
            total += pv * (ln_clamped(pv) - ln_clamped(qv));
        }
        if qv >= LOG_EPS {
            *g = -pv / (qv * n);
        }
    }
    Ok(LossGrad {
        value: total / n,
        grad,
    })
}

/// Jensen-Shannon divergence `KL(p, m)/2 + KL(q, m)/2` with `m = (p + q)/2`.
/// Gradient w.r.t. `q`.
pub fn dist_js(p: &Tensor, q: &Tensor) -> Result<LossGrad> {
    same_shape(p, q, "dist_js")?;
    let n = p.rows() as f64;
    let mut grad = Tensor::zeros(q.shape());
    let mut total = 0.0;
    for ((g, &pv), &qv) in grad.data_mut().iter_mut().zip(p.data()).zip(q.data()) {
        let m = 0.5 * (pv + qv);
        let ln_m = ln_clamped(m);
        if pv > 0.0 {
            total += 0.5 * pv * (ln_clamped(pv) - ln_m);
        }
        if qv > 0.0 {
            total += 0.5 * qv * (ln_clamped(qv) - ln_m);
        }
        // d/dq of the two halves collapses to ln(q/m)/2
        *g = 0.5 * (ln_clamped(qv) - ln_m) / n;
    }
    Ok(LossGrad {
        value: total / n,
        grad,
    })
}

/// `distance(kind, target, learner)` with the gradient w.r.t. the learner.
pub fn distance(kind: DistanceKind, target: &Tensor, learner: &Tensor) -> Result<LossGrad> {
    match kind {
        DistanceKind::Norm2 => dist_norm2(learner, target),
        DistanceKind::Kl => dist_kl(target, learner),
        DistanceKind::Js => dist_js(target, learner),
    }
}

/// `lambda * y + (1 - lambda) * z_avg`; rows are renormalized only when their
/// sum drifts from 1 by more than 1e-9.
pub fn mixed_target(y_onehot: &Tensor, z_avg: &Tensor, lambda: f64) -> Result<Tensor> {
    same_shape(y_onehot, z_avg, "mixed_target")?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let mut out = z_avg.clone();
    if lambda == 1.0 {
        return Ok(y_onehot.clone());
    }
    if lambda > 0.0 {
        for (o, &y) in out.data_mut().iter_mut().zip(y_onehot.data()) {
            *o = lambda * y + (1.0 - lambda) * *o;
        }
    }
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            row.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok(out)
}

/// Distance between a probability target and `softmax(z, tau)`; gradient
/// w.r.t. the logits `z`.
pub fn outcome_term(kind: DistanceKind, target: &Tensor, z: &Tensor, tau: f64) -> Result<LossGrad> {
    same_shape(target, z, "outcome term")?;
    let q = softmax(z, tau);
    let d = distance(kind, target, &q)?;
    Ok(LossGrad {
        value: d.value,
        grad: softmax_backward(&q, &d.grad, tau),
    })
}

/// Distance between a raw embedding target and the learner embedding `e`.
/// Norm-2 compares raw vectors; KL/JS compare `softmax(·, tau)` of both.
pub fn embedding_term(kind: DistanceKind, target: &Tensor, e: &Tensor, tau: f64) -> Result<LossGrad> {
    same_shape(target, e, "embedding term")?;
    match kind {
        DistanceKind::Norm2 => dist_norm2(e, target),
        DistanceKind::Kl | DistanceKind::Js => {
            let p = softmax(target, tau);
            let q = softmax(e, tau);
            let d = distance(kind, &p, &q)?;
            Ok(LossGrad {
                value: d.value,
                grad: softmax_backward(&q, &d.grad, tau),
            })
        }
    }
}

/// `tau^2 * KL(softmax(z_t, tau), softmax(z_s, tau))`, gradient w.r.t. `z_s`.
pub fn kd_loss(z_t: &Tensor, z_s: &Tensor, tau: f64) -> Result<LossGrad> {
    same_shape(z_t, z_s, "kd_loss")?;
    kd_loss_from_probs(&softmax(z_t, tau), z_s, tau)
}

/// [`kd_loss`] with an already-softened teacher distribution.
pub fn kd_loss_from_probs(p_t: &Tensor, z_s: &Tensor, tau: f64) -> Result<LossGrad> {
    let mut t = outcome_term(DistanceKind::Kl, p_t, z_s, tau)?;
    let pre = tau * tau;
    t.value *= pre;
    t.grad.scale(pre);
    Ok(t)
}

/// `CE(z_s, y) + alpha * kd_loss(z_t, z_s, tau)`.
pub fn kd_student_loss(z_s: &Tensor, y: &[usize], z_t: &Tensor, tau: f64, alpha: f64) -> Result<LossGrad> {
    let mut ce = cross_entropy(z_s, y)?;
    let kd = kd_loss(z_t, z_s, tau)?;
    ce.value += alpha * kd.value;
    ce.grad.add_scaled(&kd.grad, alpha)?;
    Ok(ce)
}

/// Loss value with gradients w.r.t. a model's logits and (optionally) its
/// embeddings on the same batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLoss {
    pub value: f64,
    pub grad_logits: Tensor,
    pub grad_embeddings: Option<Tensor>,
}

/// Knowledge regularizer shared by the server and on-device objectives:
/// `d(e, e_target) + d(z, lambda*y + (1-lambda)*z_target)`, with the terms
/// selected by `mode`. `z_target` is a probability batch.
#[allow(clippy::too_many_arguments)]
fn transfer_regularizer(
    z: &Tensor,
    e: Option<&Tensor>,
    z_target: Option<&Tensor>,
    e_target: Option<&Tensor>,
    y: &[usize],
    mode: TransferMode,
    kind: DistanceKind,
    cfg: &TransferConfig,
) -> Result<ModelLoss> {
    let mut value = 0.0;
    let mut grad_logits = Tensor::zeros(z.shape());
    let mut grad_embeddings = None;
    if mode.uses_embeddings() {
        let target = e_target
            .ok_or_else(|| Error::Knowledge(format!("{} mode needs target embeddings", mode.name())))?;
        let e = e.ok_or_else(|| Error::Knowledge(format!("{} mode needs learner embeddings", mode.name())))?;
        let t = embedding_term(kind, target, e, cfg.tau)?;
        value += t.value;
        grad_embeddings = Some(t.grad);
    }
    if mode.uses_outcomes() {
        let z_avg = z_target
            .ok_or_else(|| Error::Knowledge(format!("{} mode needs target outcomes", mode.name())))?;
        let target = mixed_target(&one_hot(y, z.shape()[1])?, z_avg, cfg.lambda)?;
        let t = outcome_term(kind, &target, z, cfg.tau)?;
        value += t.value;
        grad_logits = t.grad;
    }
    Ok(ModelLoss {
        value,
        grad_logits,
        grad_embeddings,
    })
}

fn combine(base: LossGrad, reg: ModelLoss, weight: f64) -> Result<ModelLoss> {
    let mut grad_logits = base.grad;
    grad_logits.add_scaled(&reg.grad_logits, weight)?;
    let grad_embeddings = reg.grad_embeddings.map(|mut g| {
        g.scale(weight);
        g
    });
    Ok(ModelLoss {
        value: base.value + weight * reg.value,
        grad_logits,
        grad_embeddings,
    })
}

/// Server objective on a proxy batch:
/// `CE(z_s, y_r) + beta * [d(e_s, e_avg) + d(z_s, lambda*y_r + (1-lambda)*z_avg)]`.
///
/// `z_avg` is the averaged client outcome distribution, `e_avg` the averaged
/// client embedding. Both are constants.
pub fn global_cdkt_loss(
    z_s: &Tensor,
    e_s: Option<&Tensor>,
    z_avg: Option<&Tensor>,
    e_avg: Option<&Tensor>,
    y_r: &[usize],
    cfg: &TransferConfig,
) -> Result<ModelLoss> {
    let ce = cross_entropy(z_s, y_r)?;
    let reg = transfer_regularizer(z_s, e_s, z_avg, e_avg, y_r, cfg.mode, cfg.d_global, cfg)?;
    combine(ce, reg, cfg.beta)
}

/// Gradients of the on-device objective.
#[derive(Debug, Clone, PartialEq)]
pub struct OnDeviceLoss {
    pub value: f64,
    /// Gradient w.r.t. the client's logits on its private batch.
    pub grad_private_logits: Tensor,
    /// Gradients w.r.t. the client's logits and embeddings on the proxy batch.
    pub grad_proxy_logits: Tensor,
    pub grad_proxy_embeddings: Option<Tensor>,
}

/// Client objective:
/// `CE(z_n, y_n) + alpha * [d(e_n_r, e_s_r) + d(z_n_r, lambda*y_r + (1-lambda)*softmax(z_s_r))]`.
///
/// The private batch feeds only the cross-entropy; the proxy batch feeds only
/// the regularizer. Server-side arguments (`z_s_r` raw logits, `e_s_r`) are
/// constants.
#[allow(clippy::too_many_arguments)]
pub fn on_device_loss(
    z_n: &Tensor,
    y_n: &[usize],
    z_n_r: &Tensor,
    e_n_r: Option<&Tensor>,
    z_s_r: Option<&Tensor>,
    e_s_r: Option<&Tensor>,
    y_r: &[usize],
    cfg: &TransferConfig,
) -> Result<OnDeviceLoss> {
    let ce = cross_entropy(z_n, y_n)?;
    let server_probs = z_s_r.map(|z| softmax(z, cfg.tau));
    let reg = transfer_regularizer(
        z_n_r,
        e_n_r,
        server_probs.as_ref(),
        e_s_r,
        y_r,
        cfg.local_mode,
        cfg.d_local,
        cfg,
    )?;
    let mut grad_proxy_logits = reg.grad_logits;
    grad_proxy_logits.scale(cfg.alpha);
    Ok(OnDeviceLoss {
        value: ce.value + cfg.alpha * reg.value,
        grad_private_logits: ce.grad,
        grad_proxy_logits,
        grad_proxy_embeddings: reg.grad_embeddings.map(|mut g| {
            g.scale(cfg.alpha);
            g
        }),
    })
}
