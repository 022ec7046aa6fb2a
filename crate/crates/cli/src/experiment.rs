//! Single runs: fit a sampler or a baseline on one seed and score it.
//!
//! Data and evaluation streams depend only on the seed, so every cell of a
//! grid sees the same training sample and evaluation points for a given seed.

use ndr_core::baseline::{train_baseline, RegressionHead};
use ndr_core::data::Dataset;
use ndr_core::dataio::{self, TabularDataset};
use ndr_core::datagen::SimModel;
use ndr_core::loss::KernelSpec;
use ndr_core::metrics::{self, CdfErrorSpec, MetricReport};
use ndr_core::net::NetworkParams;
use ndr_core::rng::derive_seed;
use ndr_core::sampler::ConditionalSampler;
use ndr_core::train::{train_objective, train_with_validation, DistributionalObjective, TrainTrace};
use ndr_core::Result;

use crate::config::{ExperimentConfig, NetworkSection};

pub mod key {
    pub const DATA: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const TEST: u64 = 4;
    pub const BASELINE: u64 = 5;
}

/// Noise and replicate settings of one NDR fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NdrCell {
    pub m1: Option<usize>,
    pub m2: usize,
    pub dtilde: usize,
}

pub fn training_data(model: SimModel, n: usize, seed: u64) -> Result<Dataset> {
    model.sample(n, derive_seed(seed, &[key::DATA]))
}

pub fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, &[key::EVAL])
}

/// Fits the stochastic network on `data`; with `validation` given, early
/// stopping monitors it instead of a split carved from `data`.
pub fn fit_ndr(
    cfg: &ExperimentConfig,
    data: &Dataset,
    validation: Option<&Dataset>,
    cell: NdrCell,
    seed: u64,
) -> Result<(ConditionalSampler, TrainTrace)> {
    let net_cfg = NetworkSection {
        noise_dim: cell.dtilde,
        ..cfg.network.clone()
    }
    .to_config(data.dim());
    let run_seed = derive_seed(
        seed,
        &[key::TRAIN, cell.m1.unwrap_or(0) as u64, cell.m2 as u64, cell.dtilde as u64],
    );
    let train = cfg.train.to_config(cell.m1, cell.m2, run_seed);
    let net = NetworkParams::init(net_cfg, run_seed)?;
    let noise = cfg.noise.spec(&net_cfg);
    let objective = DistributionalObjective::new(KernelSpec::Energy);
    let (net, trace) = match validation {
        Some(v) if train.early_stopping.is_some() => train_with_validation(net, data, v, &noise, &train, &objective)?,
        _ => train_objective(net, data, &noise, &train, &objective)?,
    };
    Ok((ConditionalSampler::new(net, noise)?, trace))
}

pub fn cdf_spec(cfg: &ExperimentConfig) -> CdfErrorSpec {
    CdfErrorSpec {
        n_x: cfg.metrics.n_x,
        grid_n: cfg.metrics.grid_n,
        k_cdf: cfg.metrics.k_cdf,
    }
}

/// CDF error of one NDR fit on a synthetic model.
pub fn cdf_run(cfg: &ExperimentConfig, model: SimModel, n: usize, cell: NdrCell, seed: u64) -> Result<f64> {
    let data = training_data(model, n, seed)?;
    let (sampler, _) = fit_ndr(cfg, &data, None, cell, seed)?;
    metrics::cdf_l2_error(&sampler, model, &cdf_spec(cfg), eval_seed(seed))
}

/// Full metric report of a fitted sampler on a synthetic model.
pub fn evaluate_sampler(cfg: &ExperimentConfig, sampler: &ConditionalSampler, model: SimModel, seed: u64) -> Result<MetricReport> {
    let m = &cfg.metrics;
    let es = eval_seed(seed);
    let cdf = metrics::cdf_l2_error(sampler, model, &cdf_spec(cfg), es)?;
    let xs = metrics::eval_covariates(model, m.n_x, es);
    let (means, qs) = metrics::sample_point_estimates(sampler, xs.view(), &m.levels, m.k_eval, es)?;
    let (true_means, true_qs) = metrics::true_point_values(model, xs.view(), &m.levels)?;
    let mut quantile_l1 = Vec::new();
    for (i, &a) in m.levels.iter().enumerate() {
        quantile_l1.push((a, metrics::quantile_l1(&qs[i], &true_qs[i])?));
    }
    let test = model.sample(m.n_test, derive_seed(seed, &[key::TEST]))?;
    let (cov, width) = metrics::pi_metrics(sampler, &test, m.coverage, m.k_eval, es)?;
    let nll = metrics::nll(sampler, &test, &m.smoothing(), m.k_eval, es)?;
    Ok(MetricReport {
        model: model.name().into(),
        method: "ndr".into(),
        config_hash: cfg.hash(),
        seed,
        cdf_l2: Some(cdf),
        mean_l2: Some(metrics::mean_l2(&means, &true_means)?),
        quantile_l1,
        pi: vec![(m.coverage, cov, width)],
        nll: Some(nll),
        wall_ms: 0.0,
    })
}

/// `(method, metric, level, value)` entries of one comparison run.
pub type MethodValues = Vec<(String, String, Option<f64>, f64)>;

/// NDR against least squares and one pinball network per level, all with the
/// same architecture and optimizer settings.
pub fn compare_run(cfg: &ExperimentConfig, model: SimModel, seed: u64) -> Result<MethodValues> {
    let mut shared = cfg.clone();
    shared.train.epochs = cfg.compare.epochs;
    shared.train.early_stopping = cfg.compare.early_stopping;
    shared.train.m1 = None;
    let m = &cfg.metrics;
    let data = training_data(model, cfg.n, seed)?;
    let es = eval_seed(seed);
    let xs = metrics::eval_covariates(model, m.n_x, es);
    let (true_means, true_qs) = metrics::true_point_values(model, xs.view(), &m.levels)?;
    let mut out: MethodValues = Vec::new();

    let cell = NdrCell {
        m1: None,
        m2: cfg.compare.m2,
        dtilde: cfg.network.noise_dim,
    };
    let (sampler, _) = fit_ndr(&shared, &data, None, cell, seed)?;
    let (means, qs) = metrics::sample_point_estimates(&sampler, xs.view(), &m.levels, m.k_eval, es)?;
    out.push(("ndr".into(), "mean_l2".into(), None, metrics::mean_l2(&means, &true_means)?));
    for (i, &a) in m.levels.iter().enumerate() {
        out.push(("ndr".into(), "quantile_l1".into(), Some(a), metrics::quantile_l1(&qs[i], &true_qs[i])?));
    }

    let net_cfg = cfg.network.to_config(model.input_dim());
    let base_seed = derive_seed(seed, &[key::BASELINE]);
    let heads = std::iter::once(RegressionHead::SquaredError).chain(m.levels.iter().map(|&a| RegressionHead::Pinball(a)));
    for head in heads {
        let tc = shared.train.to_config(None, 1, base_seed);
        let (reg, _) = train_baseline(head, &net_cfg, &data, &tc)?;
        let pred = reg.predict(xs.view())?;
        let pred = pred.as_slice().expect("contiguous");
        match head {
            RegressionHead::SquaredError => out.push((head.method_name(), "mean_l2".into(), None, metrics::mean_l2(pred, &true_means)?)),
            RegressionHead::Pinball(a) => {
                let i = m.levels.iter().position(|&l| l == a).expect("level from list");
                out.push((head.method_name(), "quantile_l1".into(), Some(a), metrics::quantile_l1(pred, &true_qs[i])?));
            }
        }
    }
    Ok(out)
}

/// Split, filter, standardize, fit and score on the test split. Reports NLL
/// and interval width in standardized response units and, suffixed `_orig`,
/// in the original units.
pub fn realdata_run(cfg: &ExperimentConfig, table: &TabularDataset, seed: u64) -> Result<Vec<(String, Option<f64>, f64)>> {
    let r = &cfg.realdata;
    let m = &cfg.metrics;
    let prep = dataio::prepare(table, seed, r.iqr_factor, r.fit_on_all)?;
    let cell = NdrCell {
        m1: cfg.train.m1,
        m2: cfg.train.m2,
        dtilde: cfg.network.noise_dim,
    };
    let (sampler, _) = fit_ndr(cfg, &prep.train.data, Some(&prep.val.data), cell, seed)?;
    let es = eval_seed(seed);
    let (cov, width) = metrics::pi_metrics(&sampler, &prep.test.data, m.coverage, r.k, es)?;
    let nll = metrics::nll(&sampler, &prep.test.data, &m.smoothing(), r.k, es)?;
    let scale = *prep.scaler.stds.last().expect("response column");
    let scale = if scale > 0.0 { scale } else { 1.0 };
    Ok(vec![
        ("nll".into(), None, nll),
        ("pi_coverage".into(), Some(m.coverage), cov),
        ("pi_width".into(), Some(m.coverage), width),
        ("nll_orig".into(), None, nll + scale.ln()),
        ("pi_width_orig".into(), Some(m.coverage), width * scale),
    ])
}
