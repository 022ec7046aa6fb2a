//! Exact gradients of the network-plus-energy objective against central
//! differences, and structural properties of the forward pass.

use ndr_core::loss::{energy_loss, KernelSpec};
use ndr_core::ndarray::{Array1, Array2};
use ndr_core::net::{NetworkConfig, NetworkParams};
use ndr_core::rng;
use ndr_core::train::{batch_gradient, DistributionalObjective};
use proptest::prelude::*;
use rand::Rng;

const KINK_MARGIN: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
/// Central-difference roundoff level; below it both derivatives count as zero.
const ZERO_FLOOR: f64 = 1e-8;

/// Loop evaluator: raw output and the smallest hidden pre-activation magnitude.
fn reference(net: &NetworkParams, x: &[f64], u: &[f64]) -> (f64, f64) {
    let c = &net.config;
    let mut input: Vec<f64> = x.iter().chain(&u[..c.noise_dim]).copied().collect();
    let mut min_pre = f64::INFINITY;
    for (j, layer) in net.layers[..c.depth].iter().enumerate() {
        if j > 0 {
            let start = c.noise_dim + (j - 1) * c.layer_noise;
            input.extend_from_slice(&u[start..start + c.layer_noise]);
        }
        let mut next = Vec::with_capacity(layer.bias.len());
        for (row, b) in layer.weight.rows().into_iter().zip(layer.bias.iter()) {
            let z: f64 = row.iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + b;
            min_pre = min_pre.min(z.abs());
            next.push(z.max(0.0));
        }
        input = next;
    }
    let out = &net.layers[c.depth];
    let raw = out.weight.row(0).iter().zip(&input).map(|(w, v)| w * v).sum::<f64>() + out.bias[0];
    (raw, min_pre)
}

struct Instance {
    net: NetworkParams,
    x_rep: Array2<f64>,
    u: Array2<f64>,
    y: Array1<f64>,
    k: usize,
}

fn random_instance(r: &mut rng::Rng) -> Instance {
    let mut cfg = NetworkConfig::new(r.random_range(1..=3), r.random_range(3..=6), r.random_range(1..=3), r.random_range(1..=2))
        .with_layer_noise(r.random_range(0..=2));
    if r.random::<bool>() {
        cfg = cfg.with_truncation(1.5);
    }
    let mut net = NetworkParams::init(cfg, r.random()).unwrap();
    for layer in &mut net.layers {
        layer.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    let b = r.random_range(1..=4);
    let k = r.random_range(2..=4);
    let x = Array2::from_shape_fn((b, cfg.input_dim), |_| r.random_range(-1.0..1.0));
    let mut x_rep = Array2::zeros((b * k, cfg.input_dim));
    for i in 0..b {
        for j in 0..k {
            x_rep.row_mut(i * k + j).assign(&x.row(i));
        }
    }
    let u = Array2::from_shape_fn((b * k, cfg.noise_len()), |_| r.random_range(-1.0..1.0));
    let y = Array1::from_shape_fn(b, |_| r.random_range(-1.0..1.0));
    Instance { net, x_rep, u, y, k }
}

/// Every kink of ReLU, truncation and the absolute values is at least
/// `KINK_MARGIN` away.
fn kink_free(inst: &Instance) -> bool {
    let c = &inst.net.config;
    let mut g = Vec::new();
    for r in 0..inst.x_rep.nrows() {
        let (raw, min_pre) = reference(&inst.net, inst.x_rep.row(r).as_slice().unwrap(), inst.u.row(r).as_slice().unwrap());
        if min_pre < KINK_MARGIN {
            return false;
        }
        if let Some(m) = c.truncation {
            if (raw.abs() - m).abs() < KINK_MARGIN {
                return false;
            }
        }
        g.push(c.truncation.map_or(raw, |m| raw.clamp(-m, m)));
    }
    for (i, &yi) in inst.y.iter().enumerate() {
        let row = &g[i * inst.k..(i + 1) * inst.k];
        if row.iter().any(|v| (v - yi).abs() < KINK_MARGIN) {
            return false;
        }
        for a in 0..row.len() {
            for b in a + 1..row.len() {
                if (row[a] - row[b]).abs() < KINK_MARGIN {
                    return false;
                }
            }
        }
    }
    true
}

fn objective_at(inst: &Instance, flat: &[f64]) -> f64 {
    let mut net = inst.net.clone();
    net.set_flat(flat).unwrap();
    let out = net.forward_batch(inst.x_rep.view(), inst.u.view()).unwrap();
    let g = out.into_shape_with_order((inst.y.len(), inst.k)).unwrap();
    energy_loss(g.view(), inst.y.view()).unwrap()
}

#[test]
fn hundred_kink_free_instances_match_central_differences() {
    let mut r = rng::stream(2024, &[1]);
    let objective = DistributionalObjective::new(KernelSpec::Energy);
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    while accepted < 100 {
        let inst = random_instance(&mut r);
        if !kink_free(&inst) {
            continue;
        }
        accepted += 1;
        let (_, grad) = batch_gradient(&inst.net, &objective, inst.x_rep.view(), inst.u.view(), inst.y.view(), inst.k).unwrap();
        let analytic = grad.flat();
        let theta = inst.net.flat();
        let h = 1e-5;
        for p in 0..theta.len() {
            let mut plus = theta.clone();
            plus[p] += h;
            let mut minus = theta.clone();
            minus[p] -= h;
            let fd = (objective_at(&inst, &plus) - objective_at(&inst, &minus)) / (2.0 * h);
            let scale = analytic[p].abs().max(fd.abs());
            if scale < ZERO_FLOOR {
                continue;
            }
            let rel = (analytic[p] - fd).abs() / scale;
            worst = worst.max(rel);
            assert!(rel <= REL_TOL, "parameter {p}: analytic {} vs fd {fd}", analytic[p]);
        }
    }
    assert!(worst <= REL_TOL);
}

fn config_strategy() -> impl Strategy<Value = NetworkConfig> {
    (1usize..4, 1usize..8, 1usize..4, 1usize..3, 0usize..3, proptest::option::of(0.5f64..3.0))
        .prop_map(|(d, w, p, n, s, m)| {
            let c = NetworkConfig::new(d, w + s, p, n).with_layer_noise(s);
            match m {
                Some(m) => c.with_truncation(m),
                None => c,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_shapes_follow_emitted_width_and_noise(cfg in config_strategy(), seed in any::<u64>()) {
        let net = NetworkParams::init(cfg, seed).unwrap();
        net.audit_shapes().unwrap();
        prop_assert_eq!(net.layers[0].weight.ncols(), cfg.input_dim + cfg.noise_dim);
        for l in 1..cfg.depth {
            prop_assert_eq!(net.layers[l].weight.ncols(), net.layers[l - 1].weight.nrows() + cfg.layer_noise);
        }
        prop_assert_eq!(net.layers[cfg.depth].weight.dim(), (1, cfg.emitted_width()));
        prop_assert_eq!(cfg.emitted_width() + cfg.layer_noise, cfg.width);
        prop_assert_eq!(cfg.noise_len(), cfg.noise_dim + (cfg.depth - 1) * cfg.layer_noise);
    }

    #[test]
    fn forward_is_deterministic_and_bounded(cfg in config_strategy(), seed in any::<u64>(), scale in 0.1f64..20.0) {
        let net = NetworkParams::init(cfg, seed).unwrap();
        let mut r = rng::stream(seed, &[2]);
        let x = Array2::from_shape_fn((16, cfg.input_dim), |_| scale * r.random_range(-1.0..1.0));
        let u = Array2::from_shape_fn((16, cfg.noise_len()), |_| r.random_range(-1.0..1.0));
        let a = net.forward_batch(x.view(), u.view()).unwrap();
        let b = net.forward_batch(x.view(), u.view()).unwrap();
        prop_assert_eq!(&a, &b);
        for (i, v) in a.iter().enumerate() {
            prop_assert!(v.is_finite());
            let single = net.forward(x.row(i).as_slice().unwrap(), u.row(i).as_slice().unwrap()).unwrap();
            prop_assert!((single - v).abs() <= 1e-12 * (1.0 + v.abs()));
            if let Some(m) = cfg.truncation {
                prop_assert!(v.abs() <= m);
            }
        }
    }

    #[test]
    fn zero_layer_noise_matches_plain_network(d in 1usize..4, w in 1usize..8, p in 1usize..4, n in 1usize..3, seed in any::<u64>()) {
        let plain = NetworkParams::init(NetworkConfig::new(d, w, p, n), seed).unwrap();
        let appendix = NetworkParams::init(NetworkConfig::new(d, w, p, n).with_layer_noise(0), seed).unwrap();
        let mut r = rng::stream(seed, &[3]);
        let x = Array2::from_shape_fn((8, p), |_| r.random_range(-1.0..1.0));
        let u = Array2::from_shape_fn((8, n), |_| r.random_range(-1.0..1.0));
        let a = plain.forward_batch(x.view(), u.view()).unwrap();
        let b = appendix.forward_batch(x.view(), u.view()).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(s, t)| s.to_bits() == t.to_bits()));
    }
}
