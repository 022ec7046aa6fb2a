//! Evaluation metrics against known conditional laws and held-out data.

use ndarray::ArrayView2;

use crate::data::Dataset;
use crate::datagen::SimModel;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sampler::{empirical_quantile, kde, shortest_interval, ConditionalDraws, SmoothingSpec};
use crate::stats;

/// Evaluation points processed per block, bounding memory at `BLOCK * k` draws.
const BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfErrorSpec {
    pub n_x: usize,
    pub grid_n: usize,
    pub k_cdf: usize,
}

impl Default for CdfErrorSpec {
    fn default() -> Self {
        Self {
            n_x: 2000,
            grid_n: 2000,
            k_cdf: 1000,
        }
    }
}

/// `sqrt(mean_x sum_j (F_hat(x, t_j) - F(x, t_j))^2 dt)` over the midpoints
/// `t_j` of a uniform grid on `[y_lo, y_hi]`, with `F_hat` the empirical CDF
/// of `k_cdf` draws at each row of `xs`.
pub fn cdf_l2_error_at(
    sampler: &dyn ConditionalDraws,
    truth: &dyn Fn(&[f64], f64) -> f64,
    xs: ArrayView2<f64>,
    grid_n: usize,
    y_lo: f64,
    y_hi: f64,
    k_cdf: usize,
    seed: u64,
) -> Result<f64> {
    if !(y_lo < y_hi) {
        return Err(Error::InvalidArgument(format!("empty y-range [{y_lo}, {y_hi}]")));
    }
    if grid_n < 2 || k_cdf == 0 {
        return Err(Error::InvalidArgument("grid_n must be >= 2 and k_cdf >= 1".into()));
    }
    if xs.nrows() == 0 {
        return Err(Error::EmptyData("no evaluation points".into()));
    }
    let dt = (y_hi - y_lo) / grid_n as f64;
    let grid: Vec<f64> = (0..grid_n).map(|j| y_lo + (j as f64 + 0.5) * dt).collect();
    let mut total = 0.0;
    let mut start = 0;
    while start < xs.nrows() {
        let end = (start + BLOCK).min(xs.nrows());
        let block = xs.slice(ndarray::s![start..end, ..]);
        let draws = sampler.draw_block(block, start as u64, k_cdf, seed)?;
        for (x, d) in block.rows().into_iter().zip(draws.rows()) {
            let x = x.to_vec();
            let sorted = stats::sorted(d.as_slice().expect("row-major"));
            let mut below = 0;
            let mut sum = 0.0;
            for &t in &grid {
                while below < k_cdf && sorted[below] <= t {
                    below += 1;
                }
                let diff = below as f64 / k_cdf as f64 - truth(&x, t);
                sum += diff * diff;
            }
            total += sum * dt;
        }
        start = end;
    }
    Ok((total / xs.nrows() as f64).sqrt())
}

/// Evaluation covariates for metrics on a synthetic model.
pub fn eval_covariates(model: SimModel, n_x: usize, seed: u64) -> ndarray::Array2<f64> {
    model.sample_x(n_x, rng::derive_seed(seed, &[tag::COVARIATES, 1]))
}

/// CDF error over fresh covariates and the model's support range.
pub fn cdf_l2_error(sampler: &dyn ConditionalDraws, model: SimModel, spec: &CdfErrorSpec, seed: u64) -> Result<f64> {
    let xs = eval_covariates(model, spec.n_x, seed);
    let (lo, hi) = model.y_range();
    let truth = |x: &[f64], t: f64| model.true_cdf(x, t).expect("dimension checked");
    cdf_l2_error_at(sampler, &truth, xs.view(), spec.grid_n, lo, hi, spec.k_cdf, seed)
}

/// The 0.1% to 99.9% range of pooled draws, padded by 5% on each side.
pub fn empirical_y_range(draws: &[f64]) -> Result<(f64, f64)> {
    if draws.is_empty() {
        return Err(Error::EmptyData("no draws".into()));
    }
    let s = stats::sorted(draws);
    let lo = stats::quantile_type7(&s, 0.001);
    let hi = stats::quantile_type7(&s, 0.999);
    let pad = 0.05 * (hi - lo).max(f64::EPSILON);
    Ok((lo - pad, hi + pad))
}

/// `sqrt(mean (est - truth)^2)`.
pub fn mean_l2(est: &[f64], truth: &[f64]) -> Result<f64> {
    paired(est, truth)?;
    Ok((est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / est.len() as f64).sqrt())
}

/// `mean |est - truth|`.
pub fn quantile_l1(est: &[f64], truth: &[f64]) -> Result<f64> {
    paired(est, truth)?;
    Ok(est.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / est.len() as f64)
}

fn paired(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::EmptyData("no evaluation points".into()));
    }
    crate::error::dim_check("paired estimates", a.len(), b.len())
}

/// Generated-sample means and quantiles at each row of `xs`:
/// `(means, quantiles[level][row])`.
pub fn sample_point_estimates(
    sampler: &dyn ConditionalDraws,
    xs: ArrayView2<f64>,
    levels: &[f64],
    k: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut means = Vec::with_capacity(xs.nrows());
    let mut quantiles = vec![Vec::with_capacity(xs.nrows()); levels.len()];
    let mut start = 0;
    while start < xs.nrows() {
        let end = (start + BLOCK).min(xs.nrows());
        let draws = sampler.draw_block(xs.slice(ndarray::s![start..end, ..]), start as u64, k, seed)?;
        for d in draws.rows() {
            let d = d.as_slice().expect("row-major");
            means.push(stats::mean(d));
            let sorted = stats::sorted(d);
            for (q, &a) in quantiles.iter_mut().zip(levels) {
                q.push(empirical_quantile(&sorted, a)?);
            }
        }
        start = end;
    }
    Ok((means, quantiles))
}

/// True means and quantiles at each row of `xs`, in the layout of
/// [`sample_point_estimates`].
pub fn true_point_values(model: SimModel, xs: ArrayView2<f64>, levels: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut means = Vec::with_capacity(xs.nrows());
    let mut quantiles = vec![Vec::with_capacity(xs.nrows()); levels.len()];
    for x in xs.rows() {
        let x = x.to_vec();
        means.push(model.true_mean(&x)?);
        for (q, &a) in quantiles.iter_mut().zip(levels) {
            q.push(model.true_quantile(&x, a)?);
        }
    }
    Ok((means, quantiles))
}

/// Empirical coverage and mean width of shortest intervals on test pairs.
pub fn pi_metrics(sampler: &dyn ConditionalDraws, test: &Dataset, coverage: f64, k: usize, seed: u64) -> Result<(f64, f64)> {
    test.ensure_nonempty("test data")?;
    let mut hits = 0usize;
    let mut width = 0.0;
    let mut start = 0;
    while start < test.len() {
        let end = (start + BLOCK).min(test.len());
        let draws = sampler.draw_block(test.x.slice(ndarray::s![start..end, ..]), start as u64, k, seed)?;
        for (i, d) in draws.rows().into_iter().enumerate() {
            let (lo, hi) = shortest_interval(&stats::sorted(d.as_slice().expect("row-major")), coverage)?;
            let y = test.y[start + i];
            if lo <= y && y <= hi {
                hits += 1;
            }
            width += hi - lo;
        }
        start = end;
    }
    Ok((hits as f64 / test.len() as f64, width / test.len() as f64))
}

/// Mean of `-log max(p_hat(y | x), floor)` with the kernel estimate built
/// from `k` draws per test point; the bandwidth is resolved per point.
pub fn nll(sampler: &dyn ConditionalDraws, test: &Dataset, spec: &SmoothingSpec, k: usize, seed: u64) -> Result<f64> {
    spec.validate()?;
    test.ensure_nonempty("test data")?;
    let mut total = 0.0;
    let mut start = 0;
    while start < test.len() {
        let end = (start + BLOCK).min(test.len());
        let draws = sampler.draw_block(test.x.slice(ndarray::s![start..end, ..]), start as u64, k, seed)?;
        for (i, d) in draws.rows().into_iter().enumerate() {
            let d = d.as_slice().expect("row-major");
            let p = kde(d, test.y[start + i], spec.kernel, spec.resolve(d)?)?;
            total -= p.max(spec.density_floor).ln();
        }
        start = end;
    }
    Ok(total / test.len() as f64)
}

/// One `(metric, level, value)` entry of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub metric: String,
    pub level: Option<f64>,
    pub value: f64,
}

/// Metrics of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub model: String,
    pub method: String,
    pub config_hash: String,
    pub seed: u64,
    pub cdf_l2: Option<f64>,
    pub mean_l2: Option<f64>,
    pub quantile_l1: Vec<(f64, f64)>,
    /// `(coverage level, empirical coverage, mean width)`.
    pub pi: Vec<(f64, f64, f64)>,
    pub nll: Option<f64>,
    pub wall_ms: f64,
}

impl MetricReport {
    pub fn values(&self) -> Vec<MetricValue> {
        let mut out = Vec::new();
        let mut push = |metric: &str, level: Option<f64>, value: f64| {
            out.push(MetricValue {
                metric: metric.to_string(),
                level,
                value,
            })
        };
        if let Some(v) = self.cdf_l2 {
            push("cdf_l2", None, v);
        }
        if let Some(v) = self.mean_l2 {
            push("mean_l2", None, v);
        }
        for &(a, v) in &self.quantile_l1 {
            push("quantile_l1", Some(a), v);
        }
        for &(a, c, w) in &self.pi {
            push("pi_coverage", Some(a), c);
            push("pi_width", Some(a), w);
        }
        if let Some(v) = self.nll {
            push("nll", None, v);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.values() {
            if !v.value.is_finite() {
                return Err(Error::NonFinite {
                    what: "metric",
                    epoch: 0,
                    batch: 0,
                });
            }
        }
        if self.pi.iter().any(|&(_, c, _)| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidArgument("coverage outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::OracleSampler;
    use crate::loss::cramer_distance_quadrature;
    use crate::rng::Rng;
    use ndarray::Array2;

    struct Constant(f64);

    impl ConditionalDraws for Constant {
        fn input_dim(&self) -> usize {
            1
        }
        fn draw_with(&self, _: &[f64], _: &mut Rng, out: &mut [f64]) -> Result<()> {
            out.fill(self.0);
            Ok(())
        }
    }

    #[test]
    fn constant_sampler_against_uniform_truth() {
        let c = 0.3;
        let ramp = |_: &[f64], t: f64| ((t - c + 1.0) / 2.0).clamp(0.0, 1.0);
        let xs = Array2::zeros((3, 1));
        let err = cdf_l2_error_at(&Constant(c), &ramp, xs.view(), 2000, c - 2.0, c + 2.0, 10, 1).unwrap();
        let step = |t: f64| if t >= c { 1.0 } else { 0.0 };
        let oracle = cramer_distance_quadrature(step, |t| ramp(&[], t), c - 2.0, c + 2.0, 20_000).unwrap();
        assert!((err * err - oracle).abs() < 1e-3, "{} vs {oracle}", err * err);
        assert!((oracle - 1.0 / 6.0).abs() < 1e-3);
    }

    #[test]
    fn truth_against_itself_is_near_zero() {
        let s = OracleSampler { model: SimModel::M2a };
        let spec = CdfErrorSpec {
            n_x: 20,
            grid_n: 500,
            k_cdf: 20_000,
        };
        let e = cdf_l2_error(&s, SimModel::M2a, &spec, 3).unwrap();
        assert!(e < 0.01, "{e}");
        assert!(e > 0.0);
        let e2 = cdf_l2_error(&s, SimModel::M2a, &spec, 3).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn invalid_ranges() {
        let xs = Array2::zeros((1, 1));
        let f = |_: &[f64], _: f64| 0.5;
        assert!(cdf_l2_error_at(&Constant(0.0), &f, xs.view(), 10, 1.0, 1.0, 5, 0).is_err());
        assert!(cdf_l2_error_at(&Constant(0.0), &f, xs.view(), 1, 0.0, 1.0, 5, 0).is_err());
    }

    #[test]
    fn point_errors() {
        assert_eq!(mean_l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mean_l2(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), (12.5f64).sqrt());
        assert_eq!(quantile_l1(&[1.0, -1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert!(mean_l2(&[], &[]).is_err());
        assert!(quantile_l1(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn degenerate_intervals_and_floor() {
        let test = Dataset::new(Array2::zeros((4, 1)), ndarray::Array1::from_elem(4, 2.0)).unwrap();
        let (cov, width) = pi_metrics(&Constant(2.0), &test, 0.9, 50, 1).unwrap();
        assert_eq!((cov, width), (1.0, 0.0));
        let spec = SmoothingSpec::default().with_bandwidth(0.01);
        let far = Dataset::new(Array2::zeros((2, 1)), ndarray::Array1::from_elem(2, 50.0)).unwrap();
        assert_eq!(nll(&Constant(0.0), &far, &spec, 10, 1).unwrap(), -(1e-6f64).ln());
    }

    #[test]
    fn report_rows() {
        let r = MetricReport {
            cdf_l2: Some(0.1),
            quantile_l1: vec![(0.5, 0.2)],
            pi: vec![(0.95, 0.94, 1.3)],
            ..Default::default()
        };
        let v = r.values();
        assert_eq!(v.len(), 4);
        assert_eq!(v[2].metric, "pi_coverage");
        r.validate().unwrap();
    }
}
