//! Conditional sampling and the estimators read off generated draws.
//!
//! Order statistics are 1-based in the documentation below: `Y(1) <= ... <= Y(k)`.
//! Noise for evaluation point `i` comes from the stream keyed by
//! `(seed, i)`, so distinct points never share noise and repeated calls
//! reproduce the same draws.

use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::error::{dim_check, Error, Result};
use crate::net::{NetworkParams, NoiseSpec};
use crate::rng::{self, tag, Rng};
use crate::special::normal_pdf;
use crate::stats;

/// Anything that can produce draws from an estimated conditional law of `Y`.
pub trait ConditionalDraws: Sync {
    fn input_dim(&self) -> usize;

    /// Fills `out` with i.i.d. draws at covariate `x`.
    fn draw_with(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) -> Result<()>;

    /// `k` draws at `x` using the stream keyed by `(seed, x_index)`.
    fn draw(&self, x: &[f64], x_index: u64, k: usize, seed: u64) -> Result<Vec<f64>> {
        if k == 0 {
            return Err(Error::InvalidArgument("number of draws must be positive".into()));
        }
        dim_check("covariate width", self.input_dim(), x.len())?;
        let mut out = vec![0.0; k];
        self.draw_with(x, &mut point_stream(seed, x_index), &mut out)?;
        Ok(out)
    }

    /// `k` draws for every row of `xs` (row `i` keyed by index `i`).
    fn draw_matrix(&self, xs: ArrayView2<f64>, k: usize, seed: u64) -> Result<Array2<f64>> {
        self.draw_block(xs, 0, k, seed)
    }

    /// Like [`draw_matrix`](Self::draw_matrix), with row `i` keyed by
    /// `first_index + i`, so a long evaluation set can be processed in blocks.
    fn draw_block(&self, xs: ArrayView2<f64>, first_index: u64, k: usize, seed: u64) -> Result<Array2<f64>> {
        check_block(self.input_dim(), xs, k)?;
        let mut out = Array2::zeros((xs.nrows(), k));
        for (i, (x, mut row)) in xs.rows().into_iter().zip(out.rows_mut()).enumerate() {
            let x = x.to_vec();
            let mut r = point_stream(seed, first_index + i as u64);
            self.draw_with(&x, &mut r, row.as_slice_mut().expect("row-major"))?;
        }
        Ok(out)
    }
}

fn check_block(input_dim: usize, xs: ArrayView2<f64>, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("number of draws must be positive".into()));
    }
    dim_check("covariate width", input_dim, xs.ncols())
}

pub fn point_stream(seed: u64, x_index: u64) -> Rng {
    rng::stream(seed, &[tag::DRAW, x_index])
}

/// A trained network together with its noise law.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSampler {
    pub net: NetworkParams,
    pub noise: NoiseSpec,
}

impl ConditionalSampler {
    pub fn new(net: NetworkParams, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        noise.check_network(&net.config)?;
        Ok(Self { net, noise })
    }
}

impl ConditionalDraws for ConditionalSampler {
    fn input_dim(&self) -> usize {
        self.net.config.input_dim
    }

    fn draw_with(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) -> Result<()> {
        let k = out.len();
        let u = self.noise.sample_matrix(rng, k);
        let xs = ndarray::ArrayView1::from(x).insert_axis(ndarray::Axis(0));
        let xs = xs.broadcast((k, x.len())).expect("broadcast row");
        let g = self.net.forward_batch(xs, u.view())?;
        out.copy_from_slice(g.as_slice().expect("contiguous"));
        Ok(())
    }

    fn draw_block(&self, xs: ArrayView2<f64>, first_index: u64, k: usize, seed: u64) -> Result<Array2<f64>> {
        const ROWS: usize = 1 << 16;
        check_block(self.input_dim(), xs, k)?;
        let n = xs.nrows();
        let p = xs.ncols();
        let width = self.noise.len();
        let per_chunk = (ROWS / k).max(1);
        let mut out = Array2::zeros((n, k));
        let mut start = 0;
        while start < n {
            let end = (start + per_chunk).min(n);
            let rows = (end - start) * k;
            let mut x_rep = Array2::zeros((rows, p));
            let mut u = Array2::zeros((rows, width));
            for i in start..end {
                let mut r = point_stream(seed, first_index + i as u64);
                let off = (i - start) * k;
                for j in 0..k {
                    x_rep.row_mut(off + j).assign(&xs.row(i));
                }
                let block = &mut u.as_slice_mut().expect("row-major")[off * width..(off + k) * width];
                self.noise.fill(&mut r, block);
            }
            let g = self.net.forward_batch(x_rep.view(), u.view())?;
            for i in start..end {
                let off = (i - start) * k;
                out.row_mut(i)
                    .as_slice_mut()
                    .expect("row-major")
                    .copy_from_slice(&g.as_slice().expect("contiguous")[off..off + k]);
            }
            start = end;
        }
        Ok(out)
    }
}

/// Smallest `j` in `1..=k` with `j / k >= alpha`, evaluated in the same
/// floating-point expression a direct scan would use.
pub fn rank_ceil(alpha: f64, k: usize) -> usize {
    let kf = k as f64;
    let mut j = ((alpha * kf).ceil() as usize).clamp(1, k);
    while j > 1 && (j - 1) as f64 / kf >= alpha {
        j -= 1;
    }
    while j < k && (j as f64) / kf < alpha {
        j += 1;
    }
    j
}

fn check_level(alpha: f64, what: &str) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must lie in (0, 1), got {alpha}")))
    }
}

fn check_sorted(sorted: &[f64]) -> Result<()> {
    if sorted.is_empty() {
        return Err(Error::EmptyData("no draws".into()));
    }
    if sorted.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "draw",
            epoch: 0,
            batch: 0,
        });
    }
    Ok(())
}

/// `inf{t : F_k(t) >= alpha}` for the empirical CDF of the sorted draws.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> Result<f64> {
    check_level(alpha, "quantile level")?;
    check_sorted(sorted)?;
    Ok(sorted[rank_ceil(alpha, sorted.len()) - 1])
}

/// Shortest window `[Y(l), Y(l + w)]`, `w = rank_ceil(coverage, k)`, over
/// `l = 1..=k - w`; ties go to the smallest `l`.
pub fn shortest_interval(sorted: &[f64], coverage: f64) -> Result<(f64, f64)> {
    check_level(coverage, "coverage")?;
    check_sorted(sorted)?;
    let k = sorted.len();
    let w = rank_ceil(coverage, k);
    if k < 2 || w > k - 1 {
        return Err(Error::InvalidArgument(format!(
            "interval window {w} infeasible with {k} draws"
        )));
    }
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for l in 0..k - w {
        let width = sorted[l + w] - sorted[l];
        if width < best_width {
            best_width = width;
            best = l;
        }
    }
    Ok((sorted[best], sorted[best + w]))
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Equal-tailed interval at the given coverage. With miscoverage
/// `a = 1 - coverage` the endpoints are `Y(floor(a k / 2) + 1)` and
/// `Y(ceil((1 - a / 2) k))`; the two indices mirror each other, so each tail
/// drops the same number of draws.
pub fn traditional_interval(sorted: &[f64], coverage: f64) -> Result<(f64, f64)> {
    check_level(coverage, "coverage")?;
    check_sorted(sorted)?;
    let k = sorted.len();
    let a = 1.0 - coverage;
    let lo = snap(a * k as f64 / 2.0).floor() as usize + 1;
    let hi = snap((1.0 - a / 2.0) * k as f64).ceil() as usize;
    if k < 2 || lo > hi || hi > k || lo < 1 {
        return Err(Error::InvalidArgument(format!(
            "order statistics ({lo}, {hi}) infeasible with {k} draws"
        )));
    }
    Ok((sorted[lo - 1], sorted[hi - 1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothingKernel {
    Gaussian,
    Epanechnikov,
    Uniform,
}

impl SmoothingKernel {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            SmoothingKernel::Gaussian => normal_pdf(t),
            SmoothingKernel::Epanechnikov if t.abs() <= 1.0 => 0.75 * (1.0 - t * t),
            SmoothingKernel::Uniform if t.abs() <= 1.0 => 0.5,
            _ => 0.0,
        }
    }

    /// Derivative of the kernel, where it exists.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        match self {
            SmoothingKernel::Gaussian => Ok(-t * normal_pdf(t)),
            SmoothingKernel::Epanechnikov => Ok(if t.abs() < 1.0 { -1.5 * t } else { 0.0 }),
            SmoothingKernel::Uniform => Err(Error::InvalidArgument(
                "uniform kernel has no derivative for score estimation".into(),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SmoothingKernel::Gaussian => "gaussian",
            SmoothingKernel::Epanechnikov => "epanechnikov",
            SmoothingKernel::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Rule-of-thumb from the draws, optionally widened by an error hint.
    Auto { delta_hint: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingSpec {
    pub kernel: SmoothingKernel,
    /// Kernel whose derivative enters the score numerator.
    pub score_kernel: SmoothingKernel,
    pub bandwidth: Bandwidth,
    pub density_floor: f64,
    pub order: u32,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            kernel: SmoothingKernel::Gaussian,
            score_kernel: SmoothingKernel::Gaussian,
            bandwidth: Bandwidth::Auto { delta_hint: None },
            density_floor: 1e-6,
            order: 2,
        }
    }
}

pub const MIN_AUTO_BANDWIDTH: f64 = 1e-6;
pub const AUTO_BANDWIDTH_CONSTANT: f64 = 1.06;

impl SmoothingSpec {
    pub fn with_bandwidth(mut self, h: f64) -> Self {
        self.bandwidth = Bandwidth::Fixed(h);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density_floor > 0.0) {
            return Err(Error::InvalidArgument(format!("density floor must be > 0, got {}", self.density_floor)));
        }
        if self.order == 0 {
            return Err(Error::InvalidArgument("kernel order must be >= 1".into()));
        }
        match self.bandwidth {
            Bandwidth::Fixed(h) if !(h > 0.0 && h.is_finite()) => {
                Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {h}")))
            }
            Bandwidth::Auto { delta_hint: Some(d) } if !(d > 0.0) => {
                Err(Error::InvalidArgument(format!("error hint must be > 0, got {d}")))
            }
            _ => Ok(()),
        }
    }

    /// Bandwidth to use for these draws.
    pub fn resolve(&self, draws: &[f64]) -> Result<f64> {
        self.validate()?;
        Ok(match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Auto { delta_hint } => {
                auto_bandwidth(stats::sample_std(draws), draws.len(), self.order, delta_hint).max(MIN_AUTO_BANDWIDTH)
            }
        })
    }
}

/// `1.06 * std * max(k^(-1/(2m+1)), delta^(1/(2m+3)))`.
pub fn auto_bandwidth(std: f64, k: usize, order: u32, delta_hint: Option<f64>) -> f64 {
    let m = order as f64;
    let k_term = (k.max(1) as f64).powf(-1.0 / (2.0 * m + 1.0));
    let hint = delta_hint.map_or(0.0, |d| d.powf(1.0 / (2.0 * m + 3.0)));
    AUTO_BANDWIDTH_CONSTANT * std * k_term.max(hint)
}

/// Kernel density estimate at `y` with bandwidth `h`.
pub fn kde(draws: &[f64], y: f64, kernel: SmoothingKernel, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("bandwidth must be > 0, got {h}")));
    }
    if draws.is_empty() {
        return Err(Error::EmptyData("no draws".into()));
    }
    let s: f64 = draws.iter().map(|&g| kernel.eval((y - g) / h)).sum();
    Ok(s / (draws.len() as f64 * h))
}

/// Smoothed derivative of the density over the floored density estimate.
pub fn kde_score(draws: &[f64], y: f64, spec: &SmoothingSpec, h: f64) -> Result<f64> {
    spec.validate()?;
    let density = kde(draws, y, spec.kernel, h)?;
    let mut num = 0.0;
    for &g in draws {
        num += spec.score_kernel.derivative((y - g) / h)?;
    }
    num /= draws.len() as f64 * h * h;
    Ok(num / density.max(spec.density_floor))
}

impl ConditionalSampler {
    pub fn cond_moment(&self, x: &[f64], x_index: u64, w: impl Fn(f64) -> f64, k: usize, seed: u64) -> Result<f64> {
        let d = self.draw(x, x_index, k, seed)?;
        Ok(d.iter().map(|&v| w(v)).sum::<f64>() / k as f64)
    }

    pub fn cond_quantile(&self, x: &[f64], x_index: u64, alpha: f64, k: usize, seed: u64) -> Result<f64> {
        check_level(alpha, "quantile level")?;
        empirical_quantile(&stats::sorted(&self.draw(x, x_index, k, seed)?), alpha)
    }

    pub fn prediction_interval(&self, x: &[f64], x_index: u64, coverage: f64, k: usize, seed: u64) -> Result<(f64, f64)> {
        check_level(coverage, "coverage")?;
        shortest_interval(&stats::sorted(&self.draw(x, x_index, k, seed)?), coverage)
    }

    pub fn traditional_interval(&self, x: &[f64], x_index: u64, coverage: f64, k: usize, seed: u64) -> Result<(f64, f64)> {
        check_level(coverage, "coverage")?;
        traditional_interval(&stats::sorted(&self.draw(x, x_index, k, seed)?), coverage)
    }

    pub fn cond_density(&self, x: &[f64], x_index: u64, y: f64, spec: &SmoothingSpec, k: usize, seed: u64) -> Result<f64> {
        spec.validate()?;
        let d = self.draw(x, x_index, k, seed)?;
        kde(&d, y, spec.kernel, spec.resolve(&d)?)
    }

    pub fn cond_score(&self, x: &[f64], x_index: u64, y: f64, spec: &SmoothingSpec, k: usize, seed: u64) -> Result<f64> {
        spec.validate()?;
        let d = self.draw(x, x_index, k, seed)?;
        kde_score(&d, y, spec, spec.resolve(&d)?)
    }
}

/// One row of the batch estimate CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub x_index: usize,
    pub estimator: String,
    pub level_or_y: f64,
    pub value: f64,
    pub k: usize,
    pub seed: u64,
}

pub const ESTIMATE_HEADER: &str = "x_index,estimator,level_or_y,value,k,seed";

pub fn write_estimates<W: Write>(out: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ESTIMATE_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.x_index.to_string(),
            r.estimator.clone(),
            format!("{}", r.level_or_y),
            format!("{:.17e}", r.value),
            r.k.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<estimates>", e))?;
    Ok(())
}

/// Quantiles, both intervals, density and score for each row of `xs`.
pub fn batch_estimates(
    sampler: &dyn ConditionalDraws,
    xs: ArrayView2<f64>,
    levels: &[f64],
    coverages: &[f64],
    ys: &[f64],
    spec: &SmoothingSpec,
    k: usize,
    seed: u64,
) -> Result<Vec<EstimateRow>> {
    let draws = sampler.draw_matrix(xs, k, seed)?;
    let mut rows = Vec::new();
    for (i, d) in draws.rows().into_iter().enumerate() {
        let d = d.to_vec();
        let sorted = stats::sorted(&d);
        let mut push = |estimator: &str, level: f64, value: f64| {
            rows.push(EstimateRow {
                x_index: i,
                estimator: estimator.to_string(),
                level_or_y: level,
                value,
                k,
                seed,
            })
        };
        push("mean", 0.0, stats::mean(&d));
        for &a in levels {
            push("quantile", a, empirical_quantile(&sorted, a)?);
        }
        for &c in coverages {
            let (lo, hi) = shortest_interval(&sorted, c)?;
            push("pi_lo", c, lo);
            push("pi_hi", c, hi);
            let (lo, hi) = traditional_interval(&sorted, c)?;
            push("ti_lo", c, lo);
            push("ti_hi", c, hi);
        }
        let h = spec.resolve(&d)?;
        for &y in ys {
            push("density", y, kde(&d, y, spec.kernel, h)?);
            push("score", y, kde_score(&d, y, spec, h)?);
        }
    }
    Ok(rows)
}
