//! Accuracy metrics per round and window statistics over rounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::federation::Federation;
use crate::nn::Model;

/// Examples per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    /// Server accuracy on the union of all client test shards.
    pub global_acc: f64,
    /// Mean client accuracy on the union of all client test shards.
    pub c_gen: f64,
    /// Mean client accuracy on each client's own test shard.
    pub c_spec: f64,
    /// `(c_gen + c_spec) / 2`.
    pub c_per: f64,
    pub per_client_gen: Vec<f64>,
    pub per_client_spec: Vec<f64>,
    pub uplink_bytes: u64,
    pub downlink_bytes: u64,
    /// Clients that trained this round.
    pub participants: Vec<usize>,
    /// Selected clients skipped for lack of private data.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricField {
    Global,
    CGen,
    CSpec,
    CPer,
    UplinkBytes,
    DownlinkBytes,
}

impl MetricField {
    pub const ALL: [MetricField; 6] = [
        MetricField::Global,
        MetricField::CGen,
        MetricField::CSpec,
        MetricField::CPer,
        MetricField::UplinkBytes,
        MetricField::DownlinkBytes,
    ];

    /// Column name used in CSV and JSON outputs.
    pub fn name(self) -> &'static str {
        match self {
            MetricField::Global => "global",
            MetricField::CGen => "c_gen",
            MetricField::CSpec => "c_spec",
            MetricField::CPer => "c_per",
            MetricField::UplinkBytes => "uplink_bytes",
            MetricField::DownlinkBytes => "downlink_bytes",
        }
    }

    pub fn get(self, r: &RoundRecord) -> f64 {
        match self {
            MetricField::Global => r.global_acc,
            MetricField::CGen => r.c_gen,
            MetricField::CSpec => r.c_spec,
            MetricField::CPer => r.c_per,
            MetricField::UplinkBytes => r.uplink_bytes as f64,
            MetricField::DownlinkBytes => r.downlink_bytes as f64,
        }
    }
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy(model: &Model, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::State("accuracy on an empty set".into()));
    }
    let order: Vec<usize> = (0..set.len()).collect();
    let mut correct = 0usize;
    for chunk in order.chunks(EVAL_CHUNK) {
        let (x, y) = set.batch(chunk)?;
        let (_, z) = model.predict(&x)?;
        correct += z.argmax_rows().iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / set.len() as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Metrics of the current state over every client, participating or not.
/// Communication fields are left at zero for the caller to fill in.
pub fn evaluate_round(fed: &Federation) -> Result<RoundRecord> {
    let collective = fed.collective_test();
    let global_acc = accuracy(fed.server(), collective)?;
    let per_client: Vec<(f64, f64)> = fed
        .clients()
        .par_iter()
        .map(|c| Ok((accuracy(&c.model, collective)?, accuracy(&c.model, &c.test)?)))
        .collect::<Result<_>>()?;
    let (per_client_gen, per_client_spec): (Vec<f64>, Vec<f64>) = per_client.into_iter().unzip();
    let c_gen = mean(&per_client_gen);
    let c_spec = mean(&per_client_spec);
    Ok(RoundRecord {
        round: fed.round(),
        global_acc,
        c_gen,
        c_spec,
        c_per: (c_gen + c_spec) / 2.0,
        per_client_gen,
        per_client_spec,
        uplink_bytes: 0,
        downlink_bytes: 0,
        participants: Vec::new(),
        skipped: Vec::new(),
    })
}

fn window(records: &[RoundRecord], lo: usize, hi: usize, field: MetricField) -> Result<Vec<f64>> {
    if lo > hi {
        return Err(Error::State(format!("window [{lo}, {hi}] is inverted")));
    }
    let values: Vec<f64> = records
        .iter()
        .filter(|r| (lo..=hi).contains(&r.round))
        .map(|r| field.get(r))
        .collect();
    if values.is_empty() {
        return Err(Error::State(format!("no rounds in window [{lo}, {hi}]")));
    }
    Ok(values)
}

/// Median of `field` over records with `lo <= round <= hi`.
pub fn median_window(records: &[RoundRecord], lo: usize, hi: usize, field: MetricField) -> Result<f64> {
    Ok(median(window(records, lo, hi, field)?))
}

/// Population standard deviation of `field` over `lo <= round <= hi`.
pub fn window_stddev(records: &[RoundRecord], lo: usize, hi: usize, field: MetricField) -> Result<f64> {
    Ok(population_stddev(&window(records, lo, hi, field)?))
}

pub fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn population_stddev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Summary window for a run of `rounds` rounds: `[90, 100]` once the run
/// reaches 100 rounds, otherwise the final tenth (at least one round).
pub fn summary_window(rounds: usize) -> (usize, usize) {
    if rounds >= 100 {
        (90, 100)
    } else {
        let span = rounds.div_ceil(10).max(1);
        (rounds + 1 - span.min(rounds.max(1)), rounds)
    }
}
