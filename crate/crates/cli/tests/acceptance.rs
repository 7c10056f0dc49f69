//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any fails. Pass criterion numbers as arguments
//! to run a subset, e.g. `cargo test -p cdkt-cli --test acceptance -- 4 5`.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use cdkt_cli::{run_experiment, ExperimentConfig};
use cdkt_core::data::{partition_noniid, PartitionSpec, SyntheticSpec};
use cdkt_core::federation::{client_local_update, LocalObjective, LocalSettings};
use cdkt_core::losses::{cross_entropy, kd_student_loss};
use cdkt_core::metrics::{median, median_window, window_stddev};
use cdkt_core::nn::presets::Preset;
use cdkt_core::{Algorithm, Federation, FederationConfig, MetricField, RoundRecord, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, started: Instant, detail: String) -> Outcome {
    let took = started.elapsed();
    ensure(took < limit, format!("{detail}; {:.1}s of {}s allowed", took.as_secs_f64(), limit.as_secs()))
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let layers = oracles::layer_suite(20);
    let losses = oracles::loss_suite(20);
    let (worst_name, worst_loss) = losses
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, e)| (n.clone(), *e))
        .unwrap();
    let detail = format!(
        "layers max rel err {layers:.2e} (< 1e-4), {} losses max {worst_loss:.2e} at {worst_name} (< 1e-5)",
        losses.len()
    );
    if layers >= 1e-4 || worst_loss >= 1e-5 {
        return Err(detail);
    }
    within(Duration::from_secs(30), t, detail)
}

fn divergences() -> Outcome {
    let t = Instant::now();
    oracles::divergence_properties(1000, 2024)?;
    within(Duration::from_secs(5), t, "1000 pairs satisfy KL, JS and norm2 properties".into())
}

fn reductions() -> Outcome {
    let t = Instant::now();
    let src = SyntheticSpec::new(4, 60, 6, 3).generate().unwrap();
    let part = |clients: usize| {
        partition_noniid(
            &src,
            &PartitionSpec {
                n_clients: clients,
                classes_per_client: 2,
                test_frac: 0.2,
                proxy_size: 16,
                median_target: None,
                seed: 9,
            },
        )
        .unwrap()
    };
    let arch = Preset::Mlp.architecture(&[6], 4, false).unwrap();
    let base = FederationConfig {
        scenario: Scenario::FixedUsers(4),
        rounds: 10,
        eta: 0.05,
        gamma: 0.05,
        batch_size: 8,
        seed: 5,
        ..FederationConfig::default()
    };

    // (a) zero transfer weights and no server epochs
    let mut c = base.clone();
    c.transfer.alpha = 0.0;
    c.transfer.beta = 0.0;
    c.global_epochs = 0;
    let mut cdkt = Federation::new(c.clone(), &arch, part(4)).unwrap();
    c.algorithm = Algorithm::NoTransfer;
    let mut plain = Federation::new(c, &arch, part(4)).unwrap();
    for round in 1..=10 {
        let (a, b) = (cdkt.step().unwrap(), plain.step().unwrap());
        let same_models = cdkt.server().params() == plain.server().params()
            && cdkt.clients().iter().zip(plain.clients()).all(|(x, y)| x.model.params() == y.model.params());
        let same_metrics = (a.global_acc, a.c_gen, a.c_spec, a.c_per) == (b.global_acc, b.c_gen, b.c_spec, b.c_per);
        if !(same_models && same_metrics) {
            return Err(format!("(a) CDKT with zero weights diverged from No-Transfer in round {round}"));
        }
    }

    // (b) FedAvg over one client
    let mut c = base.clone();
    c.algorithm = Algorithm::FedAvg;
    c.scenario = Scenario::FixedUsers(1);
    let p = part(1);
    let (train, proxy) = (p.clients[0].train.clone(), p.proxy.clone());
    let mut fed = Federation::new(c.clone(), &arch, p).unwrap();
    let mut reference = fed.server().clone();
    for round in 0..10 {
        fed.step().unwrap();
        let s = LocalSettings {
            epochs: c.local_epochs,
            lr: c.eta,
            batch_size: c.batch_size,
            transfer: &c.transfer,
            seed: c.seed,
            round,
            client: 0,
        };
        client_local_update(&mut reference, &train, &proxy, LocalObjective::Plain, &s).unwrap();
        if fed.server().params() != reference.params() {
            return Err(format!("(b) FedAvg server differs from local SGD in round {}", round + 1));
        }
    }

    // (c) student loss without distillation
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for k in 0..200 {
        let (b, classes) = (rng.random_range(1..9), rng.random_range(2..12));
        let zs = oracles::random(&[b, classes], &mut rng);
        let zt = oracles::random(&[b, classes], &mut rng);
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let tau = rng.random_range(0.5..5.0);
        let kd = kd_student_loss(&zs, &y, &zt, tau, 0.0).unwrap();
        let ce = cross_entropy(&zs, &y).unwrap();
        if kd.value.to_bits() != ce.value.to_bits() || kd.grad != ce.grad {
            return Err(format!("(c) instance {k}: {} vs {}", kd.value, ce.value));
        }
    }
    within(
        Duration::from_secs(60),
        t,
        "(a) 10 rounds bitwise, (b) 10 rounds exact, (c) 200 instances bitwise".into(),
    )
}

/// The shared synthetic setup of the trend and stability criteria.
fn synthetic(algorithm: &str, mode: &str, scenario: &str, rounds: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        "dataset = \"synthetic\"\n\
         synthetic_classes = 10\nsynthetic_per_class = 60\nsynthetic_dim = 16\n\
         algorithm = \"{algorithm}\"\nmode = \"{mode}\"\nd_global = \"kl\"\nd_local = \"norm2\"\n\
         alpha = 2.0\nscenario = \"{scenario}\"\nclasses_per_client = 2\nproxy_size = 100\n\
         rounds = {rounds}\neta = 0.05\ngamma = 0.05\nserver_arch = \"mlp\"\nseed = {seed}\n"
    ))
    .expect("acceptance config")
}

fn run(cfg: &ExperimentConfig) -> Vec<RoundRecord> {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(cfg, None, Some(dir.path())).unwrap().output.records
}

fn generalization_trend() -> Outcome {
    let t = Instant::now();
    let mut gaps = Vec::new();
    let mut literal = Vec::new();
    for seed in 0..3 {
        let cgen = |cfg: &ExperimentConfig| median_window(&run(cfg), 26, 30, MetricField::CGen).unwrap();
        let plain = cgen(&synthetic("no_transfer", "rep", "fixed_users(10)", 30, seed));
        let rep_cfg = synthetic("cdkt", "rep", "fixed_users(10)", 30, seed);
        gaps.push(cgen(&rep_cfg) - plain);
        let mut rep_only = rep_cfg.clone();
        rep_only.local_mode = cdkt_core::TransferMode::Rep;
        literal.push(cgen(&rep_only) - plain);
    }
    let gap = median(gaps.clone());
    println!(
        "  note: with embedding-only on-device transfer as well the median gap is {:+.1} points",
        100.0 * median(literal)
    );
    let detail = format!(
        "median C-Gen gap {:+.1} points (>= +20), per seed {:?}",
        100.0 * gap,
        gaps.iter().map(|g| format!("{:+.1}", 100.0 * g)).collect::<Vec<_>>()
    );
    if gap < 0.20 {
        return Err(detail);
    }
    within(Duration::from_secs(600), t, detail)
}

fn stability() -> Outcome {
    let t = Instant::now();
    let (mut cdkt, mut fedavg) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let sd = |cfg: &ExperimentConfig| window_stddev(&run(cfg), 31, 40, MetricField::Global).unwrap();
        cdkt.push(sd(&synthetic("cdkt", "repfull", "subset(50,10)", 40, seed)));
        fedavg.push(sd(&synthetic("fedavg", "repfull", "subset(50,10)", 40, seed)));
    }
    let (c, f) = (median(cdkt.clone()), median(fedavg.clone()));
    let detail = format!("median Global stddev CDKT {c:.4} vs FedAvg {f:.4} (seeds: {cdkt:.4?} vs {fedavg:.4?})");
    if c > f {
        return Err(detail);
    }
    within(Duration::from_secs(900), t, detail)
}

/// Parameter count of the two-block reference CNN on 28x28 single-channel
/// input, counted layer by layer.
fn reference_cnn_params(classes: usize) -> usize {
    let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
    let dense = |i: usize, o: usize| i * o + o;
    let side = ((28 - 2) / 2 - 2) / 2;
    conv(1, 8) + conv(8, 16) + dense(16 * side * side, 64) + dense(64, classes)
}

fn csv_bytes(path: &Path) -> Vec<(u64, u64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[5].parse().unwrap(), f[6].parse().unwrap())
        })
        .collect()
}

fn communication() -> Outcome {
    let (proxy, classes, embed, clients) = (330u64, 10u64, 64u64, 10u64);
    let cdkt_expected = clients * proxy * (classes + embed) * 8;
    let fedavg_expected = clients * reference_cnn_params(10) as u64 * 8;
    let mut observed = Vec::new();
    for algorithm in ["cdkt", "fedavg"] {
        let cfg = ExperimentConfig::from_toml(&format!(
            "dataset = \"synthetic\"\nsynthetic_per_class = 60\nsynthetic_dim = 784\n\
             synthetic_shape = [1, 28, 28]\nserver_arch = \"fashion\"\nalgorithm = \"{algorithm}\"\n\
             mode = \"repfull\"\nproxy_size = 330\nrounds = 2\neta = 0.05\ngamma = 0.05\n"
        ))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cfg, None, Some(dir.path())).unwrap().output;
        let from_csv = csv_bytes(&dir.path().join("metrics.csv"));
        let from_ledger: Vec<(u64, u64)> = out.ledger.rounds.iter().map(|r| (r.uplink_bytes, r.downlink_bytes)).collect();
        if from_csv != from_ledger {
            return Err(format!("{algorithm}: CSV bytes {from_csv:?} disagree with ledger {from_ledger:?}"));
        }
        observed.push(from_ledger);
    }
    let cdkt_ok = observed[0].iter().all(|&(up, down)| up == cdkt_expected && down == cdkt_expected);
    let fedavg_ok = observed[1].iter().all(|&(up, down)| up == fedavg_expected && down == fedavg_expected);
    ensure(
        cdkt_ok && fedavg_ok && cdkt_expected < fedavg_expected,
        format!(
            "CDKT uplink {:?} (expected {cdkt_expected}) < FedAvg uplink {:?} (expected {fedavg_expected})",
            observed[0].iter().map(|b| b.0).collect::<Vec<_>>(),
            observed[1].iter().map(|b| b.0).collect::<Vec<_>>()
        ),
    )
}

fn determinism() -> Outcome {
    for algorithm in ["cdkt", "fedavg", "no_transfer", "kd"] {
        let cfg = synthetic(algorithm, "repfull", "subset(20,5)", 6, 17);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&cfg, None, Some(a.path())).unwrap();
        run_experiment(&cfg, None, Some(b.path())).unwrap();
        let (x, y) = (fs::read(a.path().join("metrics.csv")).unwrap(), fs::read(b.path().join("metrics.csv")).unwrap());
        if x != y {
            return Err(format!("{algorithm}: metrics.csv differs between runs"));
        }
    }
    Ok("metrics.csv byte-identical for cdkt, fedavg, no_transfer and kd".into())
}

fn heterogeneous() -> Outcome {
    let text = |algorithm: &str| {
        format!(
            "dataset = \"synthetic\"\nsynthetic_per_class = 40\nsynthetic_dim = 144\n\
             synthetic_shape = [1, 12, 12]\nserver_arch = \"mnist\"\nhetero = true\n\
             algorithm = \"{algorithm}\"\nproxy_size = 60\nrounds = 10\neta = 0.05\ngamma = 0.05\n"
        )
    };
    let cfg = ExperimentConfig::from_toml(&text("cdkt")).map_err(|e| format!("cdkt config rejected: {e:#}"))?;
    let records = run(&cfg);
    let valid = records.len() == 10
        && records.iter().enumerate().all(|(i, r)| {
            let unit = |v: f64| (0.0..=1.0).contains(&v);
            r.round == i + 1
                && [r.global_acc, r.c_gen, r.c_spec, r.c_per].into_iter().all(unit)
                && r.c_per == (r.c_gen + r.c_spec) / 2.0
                && r.per_client_gen.len() == 10
        });
    if !valid {
        return Err(format!("CDKT hetero run produced invalid metrics: {} rounds", records.len()));
    }
    match ExperimentConfig::from_toml(&text("fedavg")) {
        Ok(_) => Err("FedAvg with heterogeneous clients passed validation".into()),
        Err(e) if e.to_string().contains("FedAvg requires identical models") => Ok(format!(
            "CDKT ran 10 rounds (final Global {:.3}); FedAvg rejected: {e}",
            records[9].global_acc
        )),
        Err(e) => Err(format!("FedAvg rejected with the wrong error: {e}")),
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient suite", gradients),
        ("divergence properties", divergences),
        ("reduction equivalences", reductions),
        ("C-Gen trend", generalization_trend),
        ("stability", stability),
        ("communication accounting", communication),
        ("determinism", determinism),
        ("heterogeneous models", heterogeneous),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
