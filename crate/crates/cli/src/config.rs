//! Flat TOML experiment configuration.
//!
//! Every key is optional except `dataset` and `algorithm`; unknown keys are
//! rejected. [`ExperimentConfig::resolve`] fills dataset-dependent defaults so
//! the echoed config states every value a run used.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cdkt_core::federation::FederationConfig;
use cdkt_core::nn::presets::Preset;
use cdkt_core::{Algorithm, DistanceKind, Scenario, TransferConfig, TransferMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
    Cifar10,
    Cifar100,
    Synthetic,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::FashionMnist => "fashion_mnist",
            Dataset::Cifar10 => "cifar10",
            Dataset::Cifar100 => "cifar100",
            Dataset::Synthetic => "synthetic",
        }
    }

    /// Proxy sizes of the reference protocol; both CIFAR sets use 4200.
    fn default_proxy_size(self) -> usize {
        match self {
            Dataset::Mnist => 355,
            Dataset::FashionMnist => 330,
            Dataset::Cifar10 | Dataset::Cifar100 => 4200,
            Dataset::Synthetic => 100,
        }
    }

    fn default_classes_per_client(self) -> usize {
        match self {
            Dataset::Cifar100 => 20,
            _ => 2,
        }
    }
}

fn default_scenario() -> Scenario {
    Scenario::FixedUsers(10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    /// Dataset root; the `--data-dir` flag and `CDKT_DATA_DIR` take precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,

    #[serde(default = "d::synthetic_classes")]
    pub synthetic_classes: usize,
    #[serde(default = "d::synthetic_per_class")]
    pub synthetic_per_class: usize,
    #[serde(default = "d::synthetic_dim")]
    pub synthetic_dim: usize,
    /// Reinterpret each synthetic vector with this shape, e.g. `[1, 28, 28]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_shape: Option<Vec<usize>>,
    #[serde(default = "d::synthetic_separation")]
    pub synthetic_separation: f64,

    pub algorithm: Algorithm,
    #[serde(default = "d::mode")]
    pub mode: TransferMode,
    #[serde(default = "d::mode")]
    pub local_mode: TransferMode,
    #[serde(default = "d::d_global")]
    pub d_global: DistanceKind,
    #[serde(default = "d::d_local")]
    pub d_local: DistanceKind,
    #[serde(default = "d::half")]
    pub alpha: f64,
    #[serde(default = "d::half")]
    pub beta: f64,
    #[serde(default = "d::half")]
    pub lambda: f64,
    #[serde(default = "d::one")]
    pub tau: f64,

    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes_per_client: Option<usize>,
    #[serde(default = "d::test_frac")]
    pub test_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_target: Option<f64>,

    #[serde(default = "d::rounds")]
    pub rounds: usize,
    #[serde(default = "d::two")]
    pub local_epochs: usize,
    #[serde(default = "d::two")]
    pub global_epochs: usize,
    #[serde(default = "d::rate")]
    pub eta: f64,
    #[serde(default = "d::rate")]
    pub gamma: f64,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_arch: Option<Preset>,
    /// Clients use the server preset minus one conv block.
    #[serde(default)]
    pub hetero: bool,
    #[serde(default)]
    pub fedavg_weighted: bool,
    #[serde(default = "d::yes")]
    pub server_proxy_training: bool,

    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d::out_dir")]
    pub out_dir: PathBuf,
}

/// Serde default providers.
mod d {
    use super::*;

    pub fn synthetic_classes() -> usize {
        10
    }
    pub fn synthetic_per_class() -> usize {
        100
    }
    pub fn synthetic_dim() -> usize {
        16
    }
    pub fn synthetic_separation() -> f64 {
        6.0
    }
    pub fn mode() -> TransferMode {
        TransferMode::RepFull
    }
    pub fn d_global() -> DistanceKind {
        DistanceKind::Kl
    }
    pub fn d_local() -> DistanceKind {
        DistanceKind::Norm2
    }
    pub fn half() -> f64 {
        0.5
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn test_frac() -> f64 {
        0.2
    }
    pub fn rounds() -> usize {
        100
    }
    pub fn two() -> usize {
        2
    }
    pub fn rate() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        20
    }
    pub fn yes() -> bool {
        true
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("out")
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.resolve()
    }

    /// Fills dataset-dependent defaults and validates every range.
    pub fn resolve(mut self) -> Result<Self> {
        self.classes_per_client.get_or_insert(self.dataset.default_classes_per_client());
        self.proxy_size.get_or_insert(self.dataset.default_proxy_size());
        if self.server_arch.is_none() {
            self.server_arch = Some(match self.dataset {
                Dataset::Mnist | Dataset::FashionMnist => Preset::Mnist,
                Dataset::Cifar10 | Dataset::Cifar100 => Preset::Cifar,
                Dataset::Synthetic => match &self.synthetic_shape {
                    Some(s) if s.len() == 3 => Preset::Mnist,
                    _ => Preset::Mlp,
                },
            });
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                bail!("{key} must be positive, got {v}");
            }
            Ok(())
        };
        let nonneg = |key: &str, v: f64| -> Result<()> {
            if !(v.is_finite() && v >= 0.0) {
                bail!("{key} must be non-negative, got {v}");
            }
            Ok(())
        };
        positive("eta", self.eta)?;
        positive("gamma", self.gamma)?;
        positive("tau", self.tau)?;
        positive("synthetic_separation", self.synthetic_separation)?;
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            bail!("lambda must be in [0, 1], got {}", self.lambda);
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            bail!("test_frac must be in (0, 1), got {}", self.test_frac);
        }
        if let Some(t) = self.median_target {
            positive("median_target", t)?;
        }
        if self.batch_size == 0 {
            bail!("batch_size must be at least 1");
        }
        if self.classes_per_client == Some(0) {
            bail!("classes_per_client must be at least 1");
        }
        let (total, per_round) = (self.scenario.total_clients(), self.scenario.per_round());
        if total == 0 || per_round == 0 || per_round > total {
            bail!("scenario {} must select between 1 and {total} clients", self.scenario);
        }
        if self.dataset == Dataset::Synthetic {
            if self.synthetic_classes < 2 {
                bail!("synthetic_classes must be at least 2");
            }
            if self.synthetic_per_class == 0 || self.synthetic_dim == 0 {
                bail!("synthetic_per_class and synthetic_dim must be positive");
            }
            if let Some(shape) = &self.synthetic_shape {
                if shape.iter().product::<usize>() != self.synthetic_dim || shape.contains(&0) {
                    bail!("synthetic_shape {shape:?} does not hold synthetic_dim = {} values", self.synthetic_dim);
                }
            }
        }
        if self.hetero && self.algorithm == Algorithm::FedAvg {
            bail!("hetero: FedAvg requires identical models");
        }
        Ok(())
    }

    /// Effective config as TOML; loading it back yields the same config.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(&self) -> Preset {
        self.server_arch.expect("resolved config")
    }

    pub fn transfer(&self) -> TransferConfig {
        TransferConfig {
            mode: self.mode,
            local_mode: self.local_mode,
            d_global: self.d_global,
            d_local: self.d_local,
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            tau: self.tau,
        }
    }

    pub fn federation(&self) -> FederationConfig {
        FederationConfig {
            algorithm: self.algorithm,
            transfer: self.transfer(),
            scenario: self.scenario,
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            global_epochs: self.global_epochs,
            eta: self.eta,
            gamma: self.gamma,
            batch_size: self.batch_size,
            fedavg_weighted: self.fedavg_weighted,
            server_proxy_training: self.server_proxy_training,
            seed: self.seed,
        }
    }

    /// Run label such as `cdkt-repfull`, `fedavg` or `no_transfer`.
    pub fn label(&self) -> String {
        self.federation().label()
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
}
