//! Cross-device knowledge transfer (CDKT) for federated learning.
//!
//! The crate is a deterministic, in-process simulator. A server model and a set
//! of client models exchange *knowledge* (logits and/or embedding features
//! evaluated on a small shared proxy set) instead of parameters. FedAvg,
//! No-Transfer and ensemble-KD baselines run on the same machinery so the
//! algorithms can be compared round by round.
//!
//! Layout:
//! - [`tensor`] and [`nn`]: a small reverse-mode model engine (dense, conv2d,
//!   maxpool, relu, flatten) with plain SGD.
//! - [`data`]: IDX / CIFAR loaders, a synthetic generator, the non-i.i.d.
//!   partitioner and the mini-batch sampler.
//! - [`losses`]: cross-entropy, distances (norm2, KL, JS), KD and CDKT objectives
//!   with exact gradients.
//! - [`federation`]: the round loop, knowledge exchange and communication ledger.
//! - [`metrics`]: Global / C-Gen / C-Spec / C-Per and window statistics.

pub mod data;
pub mod error;
pub mod federation;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use data::{LabeledSet, Partition};
pub use error::{Error, Result};
pub use federation::{
    Algorithm, CollectiveKnowledge, CommLedger, Federation, FederationConfig, Knowledge,
    Producer, RunOutput, Scenario,
};
pub use losses::{DistanceKind, TransferConfig, TransferMode};
pub use metrics::{MetricField, RoundRecord};
pub use nn::{LayerSpec, Model};
pub use tensor::Tensor;
