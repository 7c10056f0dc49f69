//! Runs one configured experiment and writes its artifacts.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/config.toml             effective config, loadable as input
//! <out>/metrics.csv             one row per round
//! <out>/summary.json            window medians and stddevs
//! <out>/partition.json          source indices per client and proxy
//! <out>/server.ckpt[.json]      final server parameters and architecture
//! <out>/plotdata/<label>_<metric>.dat
//! ```
//!
//! The simulation finishes in memory before anything is written, and files
//! from a failed write are removed again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cdkt_core::data::{load_cifar_binary, load_idx, partition_noniid, CifarKind, PartitionManifest, PartitionSpec, SyntheticSpec};
use cdkt_core::metrics::{median, population_stddev, summary_window};
use cdkt_core::nn::save_checkpoint;
use cdkt_core::{Federation, LabeledSet, MetricField, RoundRecord, RunOutput};
use log::info;
use serde::{Deserialize, Serialize};

use crate::config::{Dataset, ExperimentConfig};

/// Bumped whenever the summary layout changes.
pub const SUMMARY_SCHEMA: u32 = 1;

pub const CSV_HEADER: &str = "round,global,c_gen,c_spec,c_per,uplink_bytes,downlink_bytes";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary {
    pub median: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: u32,
    pub label: String,
    pub algorithm: String,
    pub dataset: String,
    pub scenario: String,
    pub seed: u64,
    pub rounds: usize,
    /// Inclusive 1-based round range the statistics cover.
    pub window: [usize; 2],
    pub metrics: BTreeMap<String, FieldSummary>,
    pub config: ExperimentConfig,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub output: RunOutput,
    pub summary: Summary,
}

/// Dataset root: explicit override, then the config key, then `./data`.
fn data_root(cfg: &ExperimentConfig, overridden: Option<&Path>) -> PathBuf {
    overridden
        .map(Path::to_path_buf)
        .or_else(|| cfg.data_dir.clone())
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads the whole dataset; the partitioner draws train, test and proxy from it.
pub fn load_dataset(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<LabeledSet> {
    let root = data_root(cfg, data_dir).join(cfg.dataset.name());
    let set = match cfg.dataset {
        Dataset::Synthetic => {
            let spec = SyntheticSpec {
                separation: cfg.synthetic_separation,
                ..SyntheticSpec::new(cfg.synthetic_classes, cfg.synthetic_per_class, cfg.synthetic_dim, cfg.seed)
            };
            let set = spec.generate()?;
            match &cfg.synthetic_shape {
                Some(shape) => set.reshaped(shape.clone())?,
                None => set,
            }
        }
        Dataset::Mnist | Dataset::FashionMnist => {
            let train = load_idx(&root.join("train-images-idx3-ubyte"), &root.join("train-labels-idx1-ubyte"))
                .with_context(|| format!("loading {} training files from {}", cfg.dataset.name(), root.display()))?;
            let test = load_idx(&root.join("t10k-images-idx3-ubyte"), &root.join("t10k-labels-idx1-ubyte"))
                .with_context(|| format!("loading {} test files from {}", cfg.dataset.name(), root.display()))?;
            LabeledSet::concat(&[&train, &test])?
        }
        Dataset::Cifar10 => {
            let mut files: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
            files.push(root.join("test_batch.bin"));
            load_cifar_binary(&files, CifarKind::Cifar10)
                .with_context(|| format!("loading cifar10 from {}", root.display()))?
        }
        Dataset::Cifar100 => load_cifar_binary(&[root.join("train.bin"), root.join("test.bin")], CifarKind::Cifar100)
            .with_context(|| format!("loading cifar100 from {}", root.display()))?,
    };
    Ok(set)
}

/// Builds the federation for `cfg` without running any rounds.
pub fn build_federation(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Federation> {
    Ok(prepare(cfg, data_dir)?.0)
}

fn prepare(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<(Federation, PartitionManifest)> {
    let source = load_dataset(cfg, data_dir)?;
    let spec = PartitionSpec {
        n_clients: cfg.scenario.total_clients(),
        classes_per_client: cfg.classes_per_client.expect("resolved config"),
        test_frac: cfg.test_frac,
        proxy_size: cfg.proxy_size.expect("resolved config"),
        median_target: cfg.median_target,
        seed: cfg.seed,
    };
    let partition = partition_noniid(&source, &spec)?;
    let manifest = partition.manifest();
    let preset = cfg.preset();
    let shape = source.example_shape();
    let server_arch = preset.architecture(shape, source.classes(), false)?;
    let client_arch = preset.architecture(shape, source.classes(), cfg.hetero)?;
    let fed = Federation::with_architectures(cfg.federation(), &server_arch, &client_arch, partition)?;
    Ok((fed, manifest))
}

fn fmt_value(field: MetricField, v: f64) -> String {
    match field {
        MetricField::UplinkBytes | MetricField::DownlinkBytes => format!("{}", v as u64),
        _ => format!("{v:.6}"),
    }
}

pub fn metrics_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.round.to_string());
        for f in MetricField::ALL {
            out.push(',');
            out.push_str(&fmt_value(f, f.get(r)));
        }
        out.push('\n');
    }
    out
}

/// Window statistics over the values exactly as written to the CSV, so a
/// reader recomputing them from the file gets the same numbers. A run with no
/// rounds has an empty metrics map.
pub fn summarize(cfg: &ExperimentConfig, records: &[RoundRecord]) -> Summary {
    let (lo, hi) = summary_window(cfg.rounds);
    let mut metrics = BTreeMap::new();
    for f in MetricField::ALL {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| (lo..=hi).contains(&r.round))
            .map(|r| fmt_value(f, f.get(r)).parse::<f64>().expect("formatted number"))
            .collect();
        if values.is_empty() {
            continue;
        }
        metrics.insert(
            f.name().to_string(),
            FieldSummary {
                median: median(values.clone()),
                stddev: population_stddev(&values),
            },
        );
    }
    Summary {
        schema: SUMMARY_SCHEMA,
        label: cfg.label(),
        algorithm: cfg.algorithm.name().to_string(),
        dataset: cfg.dataset.name().to_string(),
        scenario: cfg.scenario.to_string(),
        seed: cfg.seed,
        rounds: cfg.rounds,
        window: [lo, hi],
        metrics,
        config: cfg.clone(),
    }
}

fn plot_file(label: &str, field: MetricField, records: &[RoundRecord]) -> (String, String) {
    let mut body = format!("# round {}\n", field.name());
    for r in records {
        body.push_str(&format!("{} {}\n", r.round, fmt_value(field, field.get(r))));
    }
    (format!("{label}_{}.dat", field.name()), body)
}

/// Tracks written paths so a failed write can be rolled back.
struct Writer {
    written: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
}

impl Writer {
    fn dir(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
            self.created_dirs.push(path.to_path_buf());
        }
        Ok(())
    }

    fn file(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        self.written.push(path.clone());
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }

    fn rollback(self) {
        for p in self.written.iter().rev() {
            let _ = fs::remove_file(p);
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

fn write_outputs(
    w: &mut Writer,
    out: &Path,
    cfg: &ExperimentConfig,
    fed: &Federation,
    manifest: &str,
    output: &RunOutput,
    summary: &Summary,
) -> Result<()> {
    w.dir(out)?;
    w.file(out.join("config.toml"), &cfg.echo())?;
    w.file(out.join("metrics.csv"), &metrics_csv(&output.records))?;
    w.file(out.join("summary.json"), &serde_json::to_string_pretty(summary)?)?;
    w.file(out.join("partition.json"), manifest)?;
    let ckpt = out.join("server.ckpt");
    w.written.push(ckpt.clone());
    w.written.push(out.join("server.ckpt.json"));
    save_checkpoint(fed.server(), &ckpt)?;
    let plots = out.join("plotdata");
    w.dir(&plots)?;
    for f in MetricField::ALL {
        let (name, body) = plot_file(&summary.label, f, &output.records);
        w.file(plots.join(name), &body)?;
    }
    Ok(())
}

/// Runs `cfg` and writes its artifacts under `out_dir` (default: the config's).
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>, out_dir: Option<&Path>) -> Result<RunArtifacts> {
    let cfg = cfg.clone().resolve()?;
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir.clone());
    let (mut fed, manifest) = prepare(&cfg, data_dir)?;
    info!(
        "{} on {}: {} clients, proxy {}, {} rounds",
        cfg.label(),
        cfg.dataset.name(),
        fed.clients().len(),
        fed.proxy().len(),
        cfg.rounds
    );
    let manifest = serde_json::to_string_pretty(&manifest)?;
    let output = fed.run()?;
    if let Some(last) = output.records.last() {
        info!("round {}: global {:.4}, c_per {:.4}", last.round, last.global_acc, last.c_per);
    }
    let summary = summarize(&cfg, &output.records);

    let mut w = Writer {
        written: Vec::new(),
        created_dirs: Vec::new(),
    };
    if let Err(e) = write_outputs(&mut w, &out, &cfg, &fed, &manifest, &output, &summary) {
        w.rollback();
        return Err(e);
    }
    Ok(RunArtifacts {
        out_dir: out,
        output,
        summary,
    })
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{} is not JSON", path.display()))?;
    match value.get("schema").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(SUMMARY_SCHEMA) => {}
        Some(v) => bail!("{}: summary schema {v}, expected {SUMMARY_SCHEMA}", path.display()),
        None => return Err(anyhow!("{}: not a run summary (no schema field)", path.display())),
    }
    serde_json::from_value(value).with_context(|| format!("{}: summary schema mismatch", path.display()))
}
