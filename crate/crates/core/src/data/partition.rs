//! Label-skewed client partitioning with a shared proxy set.
//!
//! 1. The proxy set is drawn first, stratified so every class appears.
//! 2. Each client draws `classes_per_client` distinct classes; different
//!    clients may share classes.
//! 3. The remaining examples of each class are split among the clients holding
//!    it with symmetric Dirichlet(1) shares (at least [`MIN_PER_HOLDING`] each),
//!    optionally scaled down so the median client size approaches a target.
//! 4. Each client's examples are shuffled and split into train/test.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledSet};
use crate::rng;

/// Smallest number of examples a client receives for each class it holds.
pub const MIN_PER_HOLDING: usize = 2;

const DIRICHLET_CONCENTRATION: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_clients: usize,
    pub classes_per_client: usize,
    pub test_frac: f64,
    pub proxy_size: usize,
    pub median_target: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub train: LabeledSet,
    pub test: LabeledSet,
    /// Classes this client was assigned, ascending.
    pub classes: Vec<usize>,
    /// Indices into the source set.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl ClientData {
    pub fn size(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub clients: Vec<ClientData>,
    pub proxy: LabeledSet,
    pub proxy_indices: Vec<usize>,
}

/// Audit view of a partition: which source indices went where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub proxy: Vec<usize>,
    pub clients: Vec<ClientManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientManifest {
    pub classes: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Partition {
    pub fn manifest(&self) -> PartitionManifest {
        PartitionManifest {
            proxy: self.proxy_indices.clone(),
            clients: self
                .clients
                .iter()
                .map(|c| ClientManifest {
                    classes: c.classes.clone(),
                    train: c.train_indices.clone(),
                    test: c.test_indices.clone(),
                })
                .collect(),
        }
    }

    /// Union of all client test shards in client order.
    pub fn collective_test(&self) -> Result<LabeledSet, DataError> {
        let parts: Vec<&LabeledSet> = self.clients.iter().map(|c| &c.test).collect();
        LabeledSet::concat(&parts)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn partition_noniid(src: &LabeledSet, spec: &PartitionSpec) -> Result<Partition, DataError> {
    let classes = src.classes();
    if spec.n_clients == 0 {
        return Err(DataError::Invalid("need at least one client".into()));
    }
    if spec.classes_per_client == 0 || spec.classes_per_client > classes {
        return Err(DataError::Invalid(format!(
            "classes_per_client must be in 1..={classes}, got {}",
            spec.classes_per_client
        )));
    }
    if spec.proxy_size < classes {
        return Err(DataError::Invalid(format!(
            "proxy_size {} cannot cover {classes} classes",
            spec.proxy_size
        )));
    }
    if !(spec.test_frac > 0.0 && spec.test_frac < 1.0) {
        return Err(DataError::Invalid(format!("test_frac must be in (0, 1), got {}", spec.test_frac)));
    }
    if let Some(t) = spec.median_target {
        if !(t.is_finite() && t > 0.0) {
            return Err(DataError::Invalid(format!("median_target must be positive, got {t}")));
        }
    }

    let mut rng = rng::stream(spec.seed, "partition", &[]);
    let mut pools = src.class_indices();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // proxy: floor(P/C) per class, remainder spread over random classes
    let mut proxy_counts = vec![spec.proxy_size / classes; classes];
    for c in index::sample(&mut rng, classes, spec.proxy_size % classes) {
        proxy_counts[c] += 1;
    }
    let mut proxy_indices = Vec::with_capacity(spec.proxy_size);
    for (c, &k) in proxy_counts.iter().enumerate() {
        if pools[c].len() < k {
            return Err(DataError::InsufficientClass {
                class: c,
                needed: k,
                available: pools[c].len(),
            });
        }
        proxy_indices.extend(pools[c].drain(..k));
    }
    proxy_indices.sort_unstable();

    let class_map: Vec<Vec<usize>> = (0..spec.n_clients)
        .map(|_| {
            let mut cs = index::sample(&mut rng, classes, spec.classes_per_client).into_vec();
            cs.sort_unstable();
            cs
        })
        .collect();
    let mut holders = vec![Vec::new(); classes];
    for (client, cs) in class_map.iter().enumerate() {
        for &c in cs {
            holders[c].push(client);
        }
    }

    // counts[c][k] = examples of class c for holders[c][k]
    let gamma = Gamma::new(DIRICHLET_CONCENTRATION, 1.0).expect("valid gamma");
    let mut counts: Vec<Vec<usize>> = Vec::with_capacity(classes);
    for (c, hs) in holders.iter().enumerate() {
        if hs.is_empty() {
            counts.push(Vec::new());
            continue;
        }
        let avail = pools[c].len();
        let needed = MIN_PER_HOLDING * hs.len();
        if avail < needed {
            return Err(DataError::InsufficientClass {
                class: c,
                needed,
                available: avail,
            });
        }
        let draws: Vec<f64> = hs.iter().map(|_| rng.sample(gamma)).collect();
        let total: f64 = draws.iter().sum();
        let spare = (avail - needed) as f64;
        let exact: Vec<f64> = draws.iter().map(|d| d / total * spare).collect();
        let mut cnt: Vec<usize> = exact.iter().map(|e| MIN_PER_HOLDING + e.floor() as usize).collect();
        let mut leftover = avail - cnt.iter().sum::<usize>();
        let mut by_frac: Vec<usize> = (0..hs.len()).collect();
        by_frac.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &k in by_frac.iter().cycle() {
            if leftover == 0 {
                break;
            }
            cnt[k] += 1;
            leftover -= 1;
        }
        counts.push(cnt);
    }

    if let Some(target) = spec.median_target {
        let mut sizes = vec![0usize; spec.n_clients];
        for (c, hs) in holders.iter().enumerate() {
            for (k, &h) in hs.iter().enumerate() {
                sizes[h] += counts[c][k];
            }
        }
        let mut fs: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let med = median(&mut fs);
        if med > target {
            let f = target / med;
            for cnt in &mut counts {
                for v in cnt.iter_mut() {
                    *v = ((*v as f64 * f).round() as usize).max(MIN_PER_HOLDING);
                }
            }
        } else if med < target {
            log::warn!("median client size {med} is below target {target}; not enough data to grow clients");
        }
    }

    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); spec.n_clients];
    for (c, hs) in holders.iter().enumerate() {
        let mut at = 0;
        for (k, &h) in hs.iter().enumerate() {
            owned[h].extend_from_slice(&pools[c][at..at + counts[c][k]]);
            at += counts[c][k];
        }
    }

    let clients = owned
        .into_iter()
        .zip(class_map)
        .map(|(mut idx, classes)| {
            idx.shuffle(&mut rng);
            // both splits stay non-empty; moves the rounded count by at most one
            let n_test = ((spec.test_frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            let test_indices = idx[..n_test].to_vec();
            let train_indices = idx[n_test..].to_vec();
            ClientData {
                train: src.subset(&train_indices),
                test: src.subset(&test_indices),
                classes,
                train_indices,
                test_indices,
            }
        })
        .collect();

    Ok(Partition {
        clients,
        proxy: src.subset(&proxy_indices),
        proxy_indices,
    })
}
