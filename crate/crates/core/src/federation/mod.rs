//! The round loop: client selection, on-device learning, knowledge exchange,
//! server update and per-round evaluation, plus the FedAvg, No-Transfer and
//! KD baselines.

mod comm;
mod knowledge;
mod update;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSet, Partition};
use crate::error::{Error, Result};
use crate::losses::{TransferConfig, TransferMode};
use crate::metrics::{self, RoundRecord};
use crate::nn::{Architecture, Model};
use crate::rng;

pub use comm::{knowledge_bytes, parameter_bytes, CommLedger, RoundComm};
pub use knowledge::{aggregate_knowledge, extract_knowledge, CollectiveKnowledge, Knowledge, Producer};
pub use update::{
    average_params, client_local_update, server_update, LocalObjective, LocalSettings, ServerObjective,
    ServerSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Cdkt,
    #[serde(rename = "fedavg")]
    FedAvg,
    NoTransfer,
    Kd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cdkt => "cdkt",
            Algorithm::FedAvg => "fedavg",
            Algorithm::NoTransfer => "no_transfer",
            Algorithm::Kd => "kd",
        }
    }
}

/// Who takes part in each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// All `n` clients every round.
    FixedUsers(usize),
    /// `per_round` clients drawn uniformly without replacement from `total`.
    Subset { total: usize, per_round: usize },
}

impl Scenario {
    pub fn total_clients(self) -> usize {
        match self {
            Scenario::FixedUsers(n) => n,
            Scenario::Subset { total, .. } => total,
        }
    }

    pub fn per_round(self) -> usize {
        match self {
            Scenario::FixedUsers(n) => n,
            Scenario::Subset { per_round, .. } => per_round,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::FixedUsers(n) => write!(f, "fixed_users({n})"),
            Scenario::Subset { total, per_round } => write!(f, "subset({total},{per_round})"),
        }
    }
}

impl FromStr for Scenario {
    type Err = Error;

    /// Parses `fixed_users(N)` or `subset(TOTAL,PER_ROUND)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("scenario must be fixed_users(n) or subset(total,per_round), got {s:?}"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        let inner = s[open + 1..].strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<usize> = inner
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        match (s[..open].trim(), nums.as_slice()) {
            ("fixed_users", &[n]) => Ok(Scenario::FixedUsers(n)),
            ("subset", &[total, per_round]) => Ok(Scenario::Subset { total, per_round }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Scenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Scenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub transfer: TransferConfig,
    pub scenario: Scenario,
    pub rounds: usize,
    /// Client epochs per round.
    pub local_epochs: usize,
    /// Server epochs over the proxy set per round.
    pub global_epochs: usize,
    /// Client learning rate.
    pub eta: f64,
    /// Server learning rate.
    pub gamma: f64,
    pub batch_size: usize,
    /// Weight the FedAvg mean by private training-set size.
    pub fedavg_weighted: bool,
    /// Let the No-Transfer server fine-tune on proxy cross-entropy.
    pub server_proxy_training: bool,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Cdkt,
            transfer: TransferConfig::default(),
            scenario: Scenario::FixedUsers(10),
            rounds: 100,
            local_epochs: 2,
            global_epochs: 2,
            eta: 0.01,
            gamma: 0.01,
            batch_size: 20,
            fedavg_weighted: false,
            server_proxy_training: true,
            seed: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        self.transfer.validate()?;
        for (name, v) in [("eta", self.eta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let (total, per_round) = (self.scenario.total_clients(), self.scenario.per_round());
        if total == 0 || per_round == 0 || per_round > total {
            return Err(Error::Config(format!("invalid scenario {}", self.scenario)));
        }
        Ok(())
    }

    /// Short run label such as `cdkt-repfull` or `fedavg`.
    pub fn label(&self) -> String {
        match self.algorithm {
            Algorithm::Cdkt => format!("cdkt-{}", self.transfer.mode.name()),
            other => other.name().to_string(),
        }
    }
}

/// One device: its model and its private train/test shards.
#[derive(Debug, Clone)]
pub struct Client {
    pub model: Model,
    pub train: LabeledSet,
    pub test: LabeledSet,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub ledger: CommLedger,
}

/// Simulation state: server, clients, proxy set and round counter.
#[derive(Debug, Clone)]
pub struct Federation {
    cfg: FederationConfig,
    server: Model,
    clients: Vec<Client>,
    proxy: LabeledSet,
    collective_test: LabeledSet,
    round: usize,
}

impl Federation {
    /// Server and clients share one architecture.
    pub fn new(cfg: FederationConfig, arch: &Architecture, partition: Partition) -> Result<Self> {
        Self::with_architectures(cfg, arch, arch, partition)
    }

    /// Server seeded from stream `init[0]`, client `n` from `init[n + 1]`.
    /// Under FedAvg all clients start from the server's parameters.
    pub fn with_architectures(
        cfg: FederationConfig,
        server_arch: &Architecture,
        client_arch: &Architecture,
        partition: Partition,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.algorithm == Algorithm::FedAvg && server_arch != client_arch {
            return Err(Error::Config("FedAvg requires identical models".into()));
        }
        if server_arch.embedding_width()? != client_arch.embedding_width()? {
            return Err(Error::Config(format!(
                "server embedding width {} differs from client embedding width {}",
                server_arch.embedding_width()?,
                client_arch.embedding_width()?
            )));
        }
        if server_arch.num_classes()? != client_arch.num_classes()? {
            return Err(Error::Config("server and client class counts differ".into()));
        }
        let classes = partition.proxy.classes();
        if server_arch.num_classes()? != classes {
            return Err(Error::Config(format!(
                "models predict {} classes, data has {classes}",
                server_arch.num_classes()?
            )));
        }
        if partition.clients.len() != cfg.scenario.total_clients() {
            return Err(Error::Config(format!(
                "scenario {} needs {} clients, partition has {}",
                cfg.scenario,
                cfg.scenario.total_clients(),
                partition.clients.len()
            )));
        }
        let server = Model::build(server_arch, rng::derive_seed(cfg.seed, "init", &[0]))?;
        let server_params = server.params();
        let clients = partition
            .clients
            .into_iter()
            .enumerate()
            .map(|(n, c)| {
                let mut model = Model::build(client_arch, rng::derive_seed(cfg.seed, "init", &[n as u64 + 1]))?;
                if cfg.algorithm == Algorithm::FedAvg {
                    model.set_params(&server_params)?;
                }
                Ok(Client {
                    model,
                    train: c.train,
                    test: c.test,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let parts: Vec<&LabeledSet> = clients.iter().map(|c| &c.test).collect();
        let collective_test = LabeledSet::concat(&parts)?;
        Ok(Self {
            cfg,
            server,
            clients,
            proxy: partition.proxy,
            collective_test,
            round: 0,
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn server(&self) -> &Model {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut Model {
        &mut self.server
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [Client] {
        &mut self.clients
    }

    pub fn proxy(&self) -> &LabeledSet {
        &self.proxy
    }

    /// Union of all client test shards in client order.
    pub fn collective_test(&self) -> &LabeledSet {
        &self.collective_test
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Participants of the current round, ascending.
    pub fn select_clients(&self) -> Vec<usize> {
        match self.cfg.scenario {
            Scenario::FixedUsers(n) => (0..n).collect(),
            Scenario::Subset { total, per_round } => {
                let mut r = rng::stream(self.cfg.seed, "select", &[self.round as u64]);
                let mut ids = index::sample(&mut r, total, per_round).into_vec();
                ids.sort_unstable();
                ids
            }
        }
    }

    /// Local updates of `ids` in parallel. Returns the ids that trained and
    /// the ids skipped for having no private data.
    fn train_clients(&mut self, ids: &[usize], objective: LocalObjective<'_>) -> Result<(Vec<usize>, Vec<usize>)> {
        let Self {
            cfg,
            clients,
            proxy,
            round,
            ..
        } = self;
        let (cfg, proxy, round) = (&*cfg, &*proxy, *round);
        let mut picked: Vec<(usize, &mut Client)> = clients
            .iter_mut()
            .enumerate()
            .filter(|(n, _)| ids.contains(n))
            .collect();
        let results: Vec<Result<bool>> = picked
            .par_iter_mut()
            .map(|(n, c)| {
                let settings = LocalSettings {
                    epochs: cfg.local_epochs,
                    lr: cfg.eta,
                    batch_size: cfg.batch_size,
                    transfer: &cfg.transfer,
                    seed: cfg.seed,
                    round,
                    client: *n,
                };
                client_local_update(&mut c.model, &c.train, proxy, objective, &settings)
            })
            .collect();
        let mut trained = Vec::new();
        let mut skipped = Vec::new();
        for ((n, _), r) in picked.iter().zip(results) {
            if r? {
                trained.push(*n);
            } else {
                log::warn!("round {}: client {n} has no private data, skipped", round + 1);
                skipped.push(*n);
            }
        }
        Ok((trained, skipped))
    }

    fn client_knowledge(&self, ids: &[usize], mode: TransferMode) -> Result<Vec<Knowledge>> {
        ids.par_iter()
            .map(|&n| extract_knowledge(&self.clients[n].model, &self.proxy, mode, Producer::Client(n)))
            .collect()
    }

    fn run_server(&mut self, objective: ServerObjective<'_>) -> Result<()> {
        let settings = ServerSettings {
            epochs: self.cfg.global_epochs,
            lr: self.cfg.gamma,
            batch_size: self.cfg.batch_size,
            transfer: &self.cfg.transfer,
            seed: self.cfg.seed,
            round: self.round,
        };
        server_update(&mut self.server, &self.proxy, objective, &settings)
    }

    fn knowledge_comm(&self, participants: usize, up: TransferMode, down: TransferMode) -> (u64, u64) {
        let (p, c, e) = (self.proxy.len(), self.server.num_classes(), self.server.embedding_width());
        (
            knowledge_bytes(participants, p, c, e, up),
            knowledge_bytes(participants, p, c, e, down),
        )
    }

    fn round_inner(&mut self) -> Result<RoundRecord> {
        let ids = self.select_clients();
        let tau = self.cfg.transfer.tau;
        let (trained, skipped, uplink, downlink) = match self.cfg.algorithm {
            Algorithm::Cdkt => {
                let local_mode = self.cfg.transfer.local_mode;
                let mode = self.cfg.transfer.mode;
                // knowledge from the end of the previous round
                let teacher = extract_knowledge(&self.server, &self.proxy, local_mode, Producer::Server)?;
                let (trained, skipped) = self.train_clients(&ids, LocalObjective::Cdkt(&teacher))?;
                if !trained.is_empty() {
                    let uploads = self.client_knowledge(&trained, mode)?;
                    let collective = aggregate_knowledge(&uploads, tau)?;
                    self.run_server(ServerObjective::Cdkt(&collective))?;
                }
                let (up, down) = self.knowledge_comm(trained.len(), mode, local_mode);
                (trained, skipped, up, down)
            }
            Algorithm::Kd => {
                let teacher = extract_knowledge(&self.server, &self.proxy, TransferMode::Full, Producer::Server)?;
                let (trained, skipped) = self.train_clients(&ids, LocalObjective::Kd(&teacher))?;
                if !trained.is_empty() {
                    let uploads = self.client_knowledge(&trained, TransferMode::Full)?;
                    let collective = aggregate_knowledge(&uploads, tau)?;
                    self.run_server(ServerObjective::Kd(&collective))?;
                }
                let (up, down) = self.knowledge_comm(trained.len(), TransferMode::Full, TransferMode::Full);
                (trained, skipped, up, down)
            }
            Algorithm::NoTransfer => {
                let (trained, skipped) = self.train_clients(&ids, LocalObjective::Plain)?;
                if self.cfg.server_proxy_training {
                    self.run_server(ServerObjective::Supervised)?;
                }
                (trained, skipped, 0, 0)
            }
            Algorithm::FedAvg => {
                let global = self.server.params();
                for &n in &ids {
                    self.clients[n].model.set_params(&global)?;
                }
                let (trained, skipped) = self.train_clients(&ids, LocalObjective::Plain)?;
                if !trained.is_empty() {
                    let params: Vec<_> = trained.iter().map(|&n| self.clients[n].model.params()).collect();
                    let weights: Option<Vec<f64>> = self
                        .cfg
                        .fedavg_weighted
                        .then(|| trained.iter().map(|&n| self.clients[n].train.len() as f64).collect());
                    let avg = average_params(&params, weights.as_deref())?;
                    self.server.set_params(&avg)?;
                }
                let bytes = parameter_bytes(trained.len(), self.server.param_count());
                (trained, skipped, bytes, bytes)
            }
        };
        let mut record = metrics::evaluate_round(self)?;
        record.round = self.round + 1;
        record.participants = trained;
        record.skipped = skipped;
        record.uplink_bytes = uplink;
        record.downlink_bytes = downlink;
        Ok(record)
    }

    /// Runs one round and advances the counter. Errors carry the 1-based round.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let record = self.round_inner().map_err(|e| Error::Round {
            round: self.round + 1,
            source: Box::new(e),
        })?;
        self.round += 1;
        Ok(record)
    }

    /// Runs the remaining configured rounds.
    pub fn run(&mut self) -> Result<RunOutput> {
        let mut out = RunOutput::default();
        while self.round < self.cfg.rounds {
            let record = self.step()?;
            out.ledger.push(RoundComm {
                round: record.round,
                uplink_bytes: record.uplink_bytes,
                downlink_bytes: record.downlink_bytes,
            });
            out.records.push(record);
        }
        Ok(out)
    }
}
