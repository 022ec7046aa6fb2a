//! Fixtures shared by the benchmarks.

use ndr_core::ndarray::{Array1, Array2};
use ndr_core::net::{NetworkConfig, NetworkParams, NoiseDist, NoiseSpec};
use ndr_core::rng;
use ndr_core::{ConditionalSampler, Dataset, SimModel};
use rand::Rng;

/// The experiment architecture (depth 3, width 100) for `input_dim` covariates.
pub fn experiment_net(input_dim: usize, seed: u64) -> NetworkParams {
    NetworkParams::init(NetworkConfig::new(3, 100, input_dim, 1), seed).expect("valid config")
}

pub fn uniform_noise(net: &NetworkParams) -> NoiseSpec {
    NoiseSpec::for_network(NoiseDist::standard_uniform(), &net.config)
}

/// `rows` covariate and noise rows for a forward pass.
pub fn inputs(net: &NetworkParams, rows: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::stream(seed, &[0]);
    let c = &net.config;
    let x = Array2::from_shape_fn((rows, c.input_dim), |_| r.random_range(-1.0..1.0));
    let u = Array2::from_shape_fn((rows, c.noise_len()), |_| r.random::<f64>());
    (x, u)
}

/// A `b x k` loss batch.
pub fn loss_batch(b: usize, k: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut r = rng::stream(seed, &[1]);
    let g = Array2::from_shape_fn((b, k), |_| r.random_range(-2.0..2.0));
    let y = Array1::from_shape_fn(b, |_| r.random_range(-2.0..2.0));
    (g, y)
}

pub fn model_data(model: SimModel, n: usize, seed: u64) -> Dataset {
    model.sample(n, seed).expect("positive n")
}

pub fn sampler(input_dim: usize, seed: u64) -> ConditionalSampler {
    let net = experiment_net(input_dim, seed);
    let noise = uniform_noise(&net);
    ConditionalSampler::new(net, noise).expect("matching noise")
}
