//! Round metrics against brute-force evaluation.

use cdkt_core::data::{ClientData, LabeledSet, Partition};
use cdkt_core::federation::{Federation, FederationConfig, Scenario};
use cdkt_core::metrics::evaluate_round;
use cdkt_core::nn::{Architecture, LayerSpec, Model};

const C: usize = 10;
const D: usize = 2 * C;

/// Features: one-hot class in the first C slots, one-hot "noise" index in the
/// last C slots.
fn example(class: usize, noise: usize) -> Vec<f64> {
    let mut x = vec![0.0; D];
    x[class] = 1.0;
    x[C + noise] = 1.0;
    x
}

/// Client holding classes {2k, 2k+1}: each own class appears once per noise
/// value, so other classes are answered by the noise index alone.
fn shard(k: usize) -> LabeledSet {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for class in [2 * k, 2 * k + 1] {
        for noise in 0..C {
            data.extend(example(class, noise));
            labels.push(class);
        }
    }
    LabeledSet::new(vec![D], data, labels, C).unwrap()
}

fn arch() -> Architecture {
    Architecture::new(vec![D], vec![LayerSpec::dense(D, C), LayerSpec::Flatten], 1)
}

/// Perfect on its own classes, guesses the noise index elsewhere.
fn specialist(own: [usize; 2]) -> Model {
    let mut m = Model::build(&arch(), 0).unwrap();
    let mut w = vec![0.0; D * C + C];
    for c in 0..C {
        w[c * D + C + c] = 5.0;
    }
    for c in own {
        w[c * D + c] = 10.0;
    }
    m.set_params_slice(&w).unwrap();
    m
}

fn federation() -> Federation {
    let clients: Vec<ClientData> = (0..5)
        .map(|k| ClientData {
            train: shard(k),
            test: shard(k),
            classes: vec![2 * k, 2 * k + 1],
            train_indices: vec![],
            test_indices: vec![],
        })
        .collect();
    let proxy = LabeledSet::new(vec![D], example(0, 0), vec![0], C).unwrap();
    let partition = Partition {
        clients,
        proxy,
        proxy_indices: vec![],
    };
    let cfg = FederationConfig {
        scenario: Scenario::FixedUsers(5),
        ..FederationConfig::default()
    };
    let mut fed = Federation::new(cfg, &arch(), partition).unwrap();
    for k in 0..5 {
        fed.clients_mut()[k].model = specialist([2 * k, 2 * k + 1]);
    }
    *fed.server_mut() = specialist([0, 1]);
    fed
}

fn brute_force_accuracy(model: &Model, set: &LabeledSet) -> f64 {
    let mut correct = 0;
    for i in 0..set.len() {
        let (x, y) = set.batch(&[i]).unwrap();
        let (_, z) = model.predict(&x).unwrap();
        let row = z.row(0);
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == y[0]);
    }
    correct as f64 / set.len() as f64
}

#[test]
fn specialists_have_perfect_spec_and_analytic_gen() {
    let fed = federation();
    let before: Vec<_> = fed.clients().iter().map(|c| c.model.params()).collect();
    let r = evaluate_round(&fed).unwrap();
    assert_eq!(r.c_spec, 1.0);
    // 2 of 10 classes perfect, the other 8 right one time in ten
    assert!((r.c_gen - (0.2 * 1.0 + 0.8 * 0.1)).abs() < 1e-12, "c_gen {}", r.c_gen);
    for (n, c) in fed.clients().iter().enumerate() {
        assert!((r.per_client_gen[n] - brute_force_accuracy(&c.model, fed.collective_test())).abs() < 1e-15);
        assert!((r.per_client_spec[n] - brute_force_accuracy(&c.model, &c.test)).abs() < 1e-15);
    }
    assert!((r.c_per - (r.c_gen + r.c_spec) / 2.0).abs() < 1e-12);
    assert!(r.c_gen <= r.c_spec * 2.0 / C as f64 + (1.0 - 2.0 / C as f64) + 1e-12);
    let after: Vec<_> = fed.clients().iter().map(|c| c.model.params()).collect();
    assert_eq!(before, after);
}

#[test]
fn identical_server_and_client_agree() {
    let fed = federation();
    let r = evaluate_round(&fed).unwrap();
    // server is the same function as client 0
    assert_eq!(r.global_acc, r.per_client_gen[0]);
}
