//! Independent oracles shared by the gradient tests and the acceptance suite:
//! central finite differences for model parameters and loss inputs.

#![allow(dead_code)]

use cdkt_core::losses::{
    cross_entropy, dist_js, dist_kl, dist_norm2, global_cdkt_loss, kd_loss, on_device_loss, softmax,
};
use cdkt_core::nn::{Architecture, LayerSpec, Model};
use cdkt_core::{DistanceKind, Tensor, TransferConfig, TransferMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub const MODES: [TransferMode; 3] = [TransferMode::Rep, TransferMode::Full, TransferMode::RepFull];
pub const KINDS: [DistanceKind; 3] = [DistanceKind::Norm2, DistanceKind::Kl, DistanceKind::Js];

/// Relative error; the floor keeps true zeros (where differencing leaves only
/// ~1e-11 of rounding noise) from dividing by nothing.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
}

pub fn random_probs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut z = random(&[rows, cols], rng);
    z.scale(3.0);
    softmax(&z, 1.0)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error between `grad` and central differences of `f` at `x`.
pub fn check_input_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, grad: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let v = x.data()[i];
        probe.data_mut()[i] = v + H;
        let up = f(&probe);
        probe.data_mut()[i] = v - H;
        let down = f(&probe);
        probe.data_mut()[i] = v;
        worst = worst.max(rel_err(grad.data()[i], (up - down) / (2.0 * H)));
    }
    worst
}

/// Worst relative error between backward and finite differences of
/// `sum(dz * z) + sum(de * e)` over every parameter, at a generic random point
/// (zero biases can park pre-activations exactly on the ReLU kink).
pub fn worst_param_error(arch: &Architecture, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::build(arch, seed).unwrap();
    let generic = random(&[model.param_count()], &mut rng);
    model.set_params(&generic).unwrap();
    let mut shape = vec![3];
    shape.extend_from_slice(&arch.input_shape);
    let x = random(&shape, &mut rng);
    let (e, z) = model.forward(&x).unwrap();
    let dz = random(z.shape(), &mut rng);
    let de = random(e.shape(), &mut rng);
    model.zero_grads();
    model.backward(&dz, Some(&de)).unwrap();
    let analytic = model.grads();

    let base = model.params().into_data();
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + H;
        probe.set_params_slice(&p).unwrap();
        let (ep, zp) = probe.predict(&x).unwrap();
        p[i] = base[i] - H;
        probe.set_params_slice(&p).unwrap();
        let (em, zm) = probe.predict(&x).unwrap();
        p[i] = base[i];
        let numeric = (dot(&dz, &zp) + dot(&de, &ep) - dot(&dz, &zm) - dot(&de, &em)) / (2.0 * H);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

/// conv2d (random stride) -> relu -> maxpool -> flatten -> dense -> relu -> dense.
pub fn random_conv_net(rng: &mut ChaCha8Rng) -> Architecture {
    let c = rng.random_range(1..=2);
    let side = rng.random_range(7..=9);
    let conv = LayerSpec::Conv2d {
        in_channels: c,
        out_channels: rng.random_range(2..=3),
        kernel: rng.random_range(2..=3),
        stride: rng.random_range(1..=2),
    };
    let features = [conv, LayerSpec::Relu, LayerSpec::maxpool2d(), LayerSpec::Flatten];
    let flat: usize = features
        .iter()
        .fold(vec![c, side, side], |shape, l| l.output_shape(&shape).unwrap())
        .iter()
        .product();
    let hidden = rng.random_range(3..=5);
    let classes = rng.random_range(2..=4);
    Architecture::new(
        vec![c, side, side],
        vec![
            conv,
            LayerSpec::Relu,
            LayerSpec::maxpool2d(),
            LayerSpec::Flatten,
            LayerSpec::dense(flat, hidden),
            LayerSpec::Relu,
            LayerSpec::dense(hidden, classes),
        ],
        6,
    )
}

/// dense -> relu -> dense -> relu -> dense with a random embedding tap.
pub fn random_mlp(rng: &mut ChaCha8Rng) -> Architecture {
    let (d, h1, h2, c) = (
        rng.random_range(2..6),
        rng.random_range(2..6),
        rng.random_range(2..6),
        rng.random_range(2..5),
    );
    Architecture::new(
        vec![d],
        vec![
            LayerSpec::dense(d, h1),
            LayerSpec::Relu,
            LayerSpec::dense(h1, h2),
            LayerSpec::Relu,
            LayerSpec::dense(h2, c),
        ],
        rng.random_range(1..=4),
    )
}

/// Worst layer-gradient error over `instances` random conv stacks and as many
/// random MLPs.
pub fn layer_suite(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a7e);
    let mut worst: f64 = 0.0;
    for k in 0..instances as u64 {
        worst = worst.max(worst_param_error(&random_conv_net(&mut rng), k));
        worst = worst.max(worst_param_error(&random_mlp(&mut rng), 1000 + k));
    }
    worst
}

fn random_cfg(mode: TransferMode, kind: DistanceKind, rng: &mut ChaCha8Rng) -> TransferConfig {
    TransferConfig {
        mode,
        local_mode: mode,
        d_global: kind,
        d_local: kind,
        alpha: rng.random_range(0.1..2.0),
        beta: rng.random_range(0.1..2.0),
        lambda: rng.random_range(0.0..1.0),
        tau: rng.random_range(0.5..3.0),
    }
}

/// Worst gradient error per loss family over `instances` random cases each.
pub fn loss_suite(instances: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1055);
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, err: f64| match out.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(err),
        None => out.push((name, err)),
    };
    for _ in 0..instances {
        let (b, c, e) = (rng.random_range(1..5), rng.random_range(2..6), rng.random_range(2..6));
        let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();

        let z = random(&[b, c], &mut rng);
        let g = cross_entropy(&z, &y).unwrap().grad;
        record("cross_entropy".into(), check_input_grad(|t| cross_entropy(t, &y).unwrap().value, &z, &g));

        let (a, t) = (random(&[b, e], &mut rng), random(&[b, e], &mut rng));
        let g = dist_norm2(&a, &t).unwrap().grad;
        record("norm2".into(), check_input_grad(|x| dist_norm2(x, &t).unwrap().value, &a, &g));

        let p = random_probs(b, c, &mut rng);
        let q = positive(&[b, c], &mut rng);
        let g = dist_kl(&p, &q).unwrap().grad;
        record("kl".into(), check_input_grad(|x| dist_kl(&p, x).unwrap().value, &q, &g));
        let g = dist_js(&p, &q).unwrap().grad;
        record("js".into(), check_input_grad(|x| dist_js(&p, x).unwrap().value, &q, &g));

        let tau = rng.random_range(0.5..4.0);
        let (zt, zs) = (random(&[b, c], &mut rng), random(&[b, c], &mut rng));
        let g = kd_loss(&zt, &zs, tau).unwrap().grad;
        record("kd_loss".into(), check_input_grad(|x| kd_loss(&zt, x, tau).unwrap().value, &zs, &g));

        for mode in MODES {
            for kind in KINDS {
                let cfg = random_cfg(mode, kind, &mut rng);
                let tag = format!("{}/{}", mode.name(), kind.short());

                let (zs, es) = (random(&[b, c], &mut rng), random(&[b, e], &mut rng));
                let z_avg = random_probs(b, c, &mut rng);
                let e_avg = random(&[b, e], &mut rng);
                let l = global_cdkt_loss(&zs, Some(&es), Some(&z_avg), Some(&e_avg), &y, &cfg).unwrap();
                let value = |z: &Tensor, e: &Tensor| {
                    global_cdkt_loss(z, Some(e), Some(&z_avg), Some(&e_avg), &y, &cfg).unwrap().value
                };
                let mut err = check_input_grad(|x| value(x, &es), &zs, &l.grad_logits);
                let ge = l.grad_embeddings.unwrap_or_else(|| Tensor::zeros(es.shape()));
                err = err.max(check_input_grad(|x| value(&zs, x), &es, &ge));
                record(format!("global_cdkt_loss {tag}"), err);

                let bn = rng.random_range(1..4);
                let yn: Vec<usize> = (0..bn).map(|_| rng.random_range(0..c)).collect();
                let zn = random(&[bn, c], &mut rng);
                let (znr, enr) = (random(&[b, c], &mut rng), random(&[b, e], &mut rng));
                let (zsr, esr) = (random(&[b, c], &mut rng), random(&[b, e], &mut rng));
                let value = |zn: &Tensor, znr: &Tensor, enr: &Tensor| {
                    on_device_loss(zn, &yn, znr, Some(enr), Some(&zsr), Some(&esr), &y, &cfg).unwrap().value
                };
                let l = on_device_loss(&zn, &yn, &znr, Some(&enr), Some(&zsr), Some(&esr), &y, &cfg).unwrap();
                let mut err = check_input_grad(|x| value(x, &znr, &enr), &zn, &l.grad_private_logits);
                err = err.max(check_input_grad(|x| value(&zn, x, &enr), &znr, &l.grad_proxy_logits));
                let ge = l.grad_proxy_embeddings.unwrap_or_else(|| Tensor::zeros(enr.shape()));
                err = err.max(check_input_grad(|x| value(&zn, &znr, x), &enr, &ge));
                record(format!("on_device_loss {tag}"), err);
            }
        }
    }
    out
}

/// Checks the divergence properties on `pairs` random distribution pairs and
/// returns the first violation.
pub fn divergence_properties(pairs: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..pairs {
        let c = rng.random_range(2..12);
        let p = random_probs(1, c, &mut rng);
        let q = random_probs(1, c, &mut rng);
        let kl = dist_kl(&p, &q).unwrap().value;
        if kl < 0.0 {
            return Err(format!("pair {k}: KL(p,q) = {kl:e} < 0"));
        }
        let self_kl = dist_kl(&p, &p).unwrap().value;
        if self_kl.abs() >= 1e-12 {
            return Err(format!("pair {k}: KL(p,p) = {self_kl:e}"));
        }
        let (js_pq, js_qp) = (dist_js(&p, &q).unwrap().value, dist_js(&q, &p).unwrap().value);
        if (js_pq - js_qp).abs() > 1e-12 {
            return Err(format!("pair {k}: JS asymmetric by {:e}", (js_pq - js_qp).abs()));
        }
        if js_pq > std::f64::consts::LN_2 + 1e-12 {
            return Err(format!("pair {k}: JS = {js_pq} exceeds ln 2"));
        }
        let (a, b2, c2) = (random(&[1, c], &mut rng), random(&[1, c], &mut rng), random(&[1, c], &mut rng));
        if dist_norm2(&a, &a).unwrap().value != 0.0 {
            return Err(format!("pair {k}: norm2(a,a) != 0"));
        }
        let n = |x: &Tensor, y: &Tensor| dist_norm2(x, y).unwrap().value;
        if n(&a, &c2) > n(&a, &b2) + n(&b2, &c2) + 1e-12 {
            return Err(format!("pair {k}: triangle inequality violated"));
        }
    }
    Ok(())
}
