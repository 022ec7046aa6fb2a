//! Distributional regression objectives.
//!
//! Every objective takes a `B x K` matrix of generated values (row `i` holds
//! the `K` replicates for observation `i`) and the `B` observed responses.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{dim_check, Error, Result};
use crate::net::sign;

/// Kernel defining an MMD objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `k(a, b) = -|a - b|`; the MMD objective is then the energy objective.
    Energy,
    /// `k(a, b) = min(a, b)` on nonnegative values.
    MinKernel,
    Gaussian { bandwidth: f64 },
    Linear,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::Gaussian { bandwidth } = *self {
            if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                return Err(Error::Config(format!("gaussian kernel bandwidth must be positive, got {bandwidth}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            KernelSpec::Energy => -(a - b).abs(),
            KernelSpec::MinKernel => a.min(b),
            KernelSpec::Gaussian { bandwidth } => {
                let d = (a - b) / bandwidth;
                (-0.5 * d * d).exp()
            }
            KernelSpec::Linear => a * b,
        }
    }

    /// Derivative in the first argument; sign-type kernels use `sign(0) = 0`.
    pub fn d_first(&self, a: f64, b: f64) -> f64 {
        match *self {
            KernelSpec::Energy => -sign(a - b),
            KernelSpec::MinKernel => 0.5 * (1.0 - sign(a - b)),
            KernelSpec::Gaussian { bandwidth } => {
                let d = (a - b) / bandwidth;
                -(a - b) / (bandwidth * bandwidth) * (-0.5 * d * d).exp()
            }
            KernelSpec::Linear => b,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            KernelSpec::Energy => "energy".into(),
            KernelSpec::MinKernel => "min".into(),
            KernelSpec::Gaussian { bandwidth } => format!("gaussian({bandwidth})"),
            KernelSpec::Linear => "linear".into(),
        }
    }
}

fn check_batch(g: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<(usize, usize)> {
    dim_check("loss batch rows", g.nrows(), y.len())?;
    let k = g.ncols();
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "at least two noise replicates per observation are needed, got {k}"
        )));
    }
    if g.nrows() == 0 {
        return Err(Error::EmptyData("loss batch".into()));
    }
    Ok((g.nrows(), k))
}

/// Empirical energy objective:
/// `mean_i [ (2/K) sum_k |y_i - g_ik| - 1/(K(K-1)) sum_{k != l} |g_ik - g_il| ]`.
pub fn energy_loss(g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let (b, k) = check_batch(&g, &y)?;
    let kf = k as f64;
    let mut total = 0.0;
    for (row, &yi) in g.rows().into_iter().zip(y.iter()) {
        let fit: f64 = row.iter().map(|v| (yi - v).abs()).sum();
        let mut spread = 0.0;
        for a in 0..k {
            for c in (a + 1)..k {
                spread += (row[a] - row[c]).abs();
            }
        }
        // each unordered pair appears twice in the ordered sum
        total += 2.0 / kf * fit - 2.0 * spread / (kf * (kf - 1.0));
    }
    Ok(total / b as f64)
}

/// Subgradient of [`energy_loss`] with respect to every generated value.
pub fn energy_loss_output_grad(g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array2<f64>> {
    let (b, k) = check_batch(&g, &y)?;
    let kf = k as f64;
    let bf = b as f64;
    let mut out = Array2::zeros((b, k));
    for ((row, &yi), mut grad) in g.rows().into_iter().zip(y.iter()).zip(out.rows_mut()) {
        for a in 0..k {
            let pair: f64 = (0..k).filter(|&c| c != a).map(|c| sign(row[a] - row[c])).sum();
            grad[a] = (-(2.0 / kf) * sign(yi - row[a]) - 2.0 / (kf * (kf - 1.0)) * pair) / bf;
        }
    }
    Ok(out)
}

fn check_kernel_inputs(kernel: &KernelSpec, g: &ArrayView2<f64>, y: &ArrayView1<f64>) -> Result<()> {
    kernel.validate()?;
    if *kernel == KernelSpec::MinKernel && (g.iter().any(|&v| v < 0.0) || y.iter().any(|&v| v < 0.0)) {
        return Err(Error::InvalidArgument(
            "min kernel needs nonnegative values; shift data and outputs first".into(),
        ));
    }
    Ok(())
}

/// Empirical kernel MMD objective (the `g`-independent `k(Y, Y')` term dropped):
/// `mean_i [ 1/(K(K-1)) sum_{k != l} k(g_ik, g_il) - (2/K) sum_k k(g_ik, y_i) ]`.
pub fn mmd_loss(kernel: &KernelSpec, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    let (b, k) = check_batch(&g, &y)?;
    check_kernel_inputs(kernel, &g, &y)?;
    let kf = k as f64;
    let mut total = 0.0;
    for (row, &yi) in g.rows().into_iter().zip(y.iter()) {
        let mut pairs = 0.0;
        for a in 0..k {
            for c in (a + 1)..k {
                pairs += kernel.eval(row[a], row[c]);
            }
        }
        let fit: f64 = row.iter().map(|&v| kernel.eval(v, yi)).sum();
        total += 2.0 * pairs / (kf * (kf - 1.0)) - 2.0 / kf * fit;
    }
    Ok(total / b as f64)
}

/// Gradient of [`mmd_loss`] with respect to every generated value.
pub fn mmd_output_grad(kernel: &KernelSpec, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array2<f64>> {
    let (b, k) = check_batch(&g, &y)?;
    check_kernel_inputs(kernel, &g, &y)?;
    let kf = k as f64;
    let bf = b as f64;
    let mut out = Array2::zeros((b, k));
    for ((row, &yi), mut grad) in g.rows().into_iter().zip(y.iter()).zip(out.rows_mut()) {
        for a in 0..k {
            let pair: f64 = (0..k)
                .filter(|&c| c != a)
                .map(|c| kernel.d_first(row[a], row[c]))
                .sum();
            grad[a] = (2.0 / (kf * (kf - 1.0)) * pair - 2.0 / kf * kernel.d_first(row[a], yi)) / bf;
        }
    }
    Ok(out)
}

/// Midpoint-rule approximation of `int_lo^hi (F(t) - G(t))^2 dt`.
pub fn cramer_distance_quadrature<F, G>(f: F, g: G, lo: f64, hi: f64, n_grid: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("quadrature range needs lo < hi, got [{lo}, {hi}]")));
    }
    if n_grid < 2 {
        return Err(Error::InvalidArgument("quadrature needs at least two grid points".into()));
    }
    let dt = (hi - lo) / n_grid as f64;
    let sum: f64 = (0..n_grid)
        .map(|j| {
            let t = lo + (j as f64 + 0.5) * dt;
            let d = f(t) - g(t);
            d * d
        })
        .sum();
    Ok(sum * dt)
}

/// Squared conditional-CDF distance `||F_g - F*||_2^2`, averaging the
/// Cramér integral over the supplied covariate points.
pub fn population_risk_quadrature<F, G>(
    sampler_cdf: F,
    true_cdf: G,
    xs: &[Vec<f64>],
    lo: f64,
    hi: f64,
    n_grid: usize,
) -> Result<f64>
where
    F: Fn(&[f64], f64) -> f64,
    G: Fn(&[f64], f64) -> f64,
{
    if xs.is_empty() {
        return Err(Error::EmptyData("covariate sample for population risk".into()));
    }
    let mut total = 0.0;
    for x in xs {
        total += cramer_distance_quadrature(|t| sampler_cdf(x, t), |t| true_cdf(x, t), lo, hi, n_grid)?;
    }
    Ok(total / xs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, Array1};
    use rand::Rng;

    /// Ordered double loop written straight from the objective's definition.
    fn energy_loop(g: &Array2<f64>, y: &Array1<f64>) -> f64 {
        let (b, k) = g.dim();
        let kf = k as f64;
        let mut total = 0.0;
        for i in 0..b {
            let mut t1 = 0.0;
            for a in 0..k {
                t1 += (y[i] - g[[i, a]]).abs();
            }
            let mut t2 = 0.0;
            for a in 0..k {
                for c in 0..k {
                    if a != c {
                        t2 += (g[[i, a]] - g[[i, c]]).abs();
                    }
                }
            }
            total += 2.0 / kf * t1 - t2 / (kf * (kf - 1.0));
        }
        total / b as f64
    }

    fn random_batch(seed: u64, b: usize, k: usize) -> (Array2<f64>, Array1<f64>) {
        let mut r = rng::stream(seed, &[]);
        let g = Array2::from_shape_fn((b, k), |_| r.random::<f64>() * 4.0 - 2.0);
        let y = Array1::from_shape_fn(b, |_| r.random::<f64>() * 4.0 - 2.0);
        (g, y)
    }

    fn finite_diff<L: Fn(ArrayView2<f64>) -> f64>(loss: L, g: &Array2<f64>, h: f64) -> Array2<f64> {
        let mut out = Array2::zeros(g.dim());
        for idx in ndarray::indices(g.dim()) {
            let mut plus = g.clone();
            plus[idx] += h;
            let mut minus = g.clone();
            minus[idx] -= h;
            out[idx] = (loss(plus.view()) - loss(minus.view())) / (2.0 * h);
        }
        out
    }

    #[test]
    fn perfect_fit_is_zero() {
        let y = array![0.3, -1.2];
        let g = array![[0.3, 0.3, 0.3], [-1.2, -1.2, -1.2]];
        assert_eq!(energy_loss(g.view(), y.view()).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_two_point_case() {
        let g = array![[1.0, -1.0]];
        let y = array![0.0];
        assert_eq!(energy_loss(g.view(), y.view()).unwrap(), 0.0);
        let grad = energy_loss_output_grad(g.view(), y.view()).unwrap();
        assert_eq!(grad, array![[0.0, 0.0]]);
    }

    #[test]
    fn single_replicate_rejected() {
        let g = array![[1.0]];
        let y = array![0.0];
        assert!(energy_loss(g.view(), y.view()).is_err());
        assert!(energy_loss_output_grad(g.view(), y.view()).is_err());
        assert!(mmd_loss(&KernelSpec::Linear, g.view(), y.view()).is_err());
    }

    #[test]
    fn matches_loop_oracle() {
        let (g, y) = random_batch(4, 4, 5);
        let got = energy_loss(g.view(), y.view()).unwrap();
        assert!((got - energy_loop(&g, &y)).abs() < 1e-13);
    }

    #[test]
    fn gradient_with_tied_replicates() {
        let g = array![[0.5, 0.5, 0.5], [2.0, 2.0, 2.0]];
        let y = array![1.0, 0.0];
        let grad = energy_loss_output_grad(g.view(), y.view()).unwrap();
        let b = 2.0;
        let k = 3.0;
        for a in 0..3 {
            assert_eq!(grad[[0, a]], -2.0 / (b * k));
            assert_eq!(grad[[1, a]], 2.0 / (b * k));
        }
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let (g, y) = random_batch(17, 3, 4);
        let grad = energy_loss_output_grad(g.view(), y.view()).unwrap();
        let fd = finite_diff(|v| energy_loss(v, y.view()).unwrap(), &g, 1e-7);
        for (a, b) in grad.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn energy_kernel_reproduces_energy_loss() {
        let (g, y) = random_batch(2, 6, 4);
        let a = energy_loss(g.view(), y.view()).unwrap();
        let b = mmd_loss(&KernelSpec::Energy, g.view(), y.view()).unwrap();
        assert!((a - b).abs() < 1e-13);
        let ga = energy_loss_output_grad(g.view(), y.view()).unwrap();
        let gb = mmd_output_grad(&KernelSpec::Energy, g.view(), y.view()).unwrap();
        for (u, v) in ga.iter().zip(gb.iter()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_kernel_expansion() {
        let (g, y) = random_batch(8, 5, 4);
        let got = mmd_loss(&KernelSpec::Linear, g.view(), y.view()).unwrap();
        let mut want = 0.0;
        for (row, yi) in g.rows().into_iter().zip(y.iter()) {
            let s: f64 = row.sum();
            let sq: f64 = row.iter().map(|v| v * v).sum();
            let mean_pair = (s * s - sq) / (4.0 * 3.0);
            want += mean_pair - 2.0 * yi * s / 4.0;
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-13);
    }

    #[test]
    fn wide_gaussian_tends_to_constant_limit() {
        let (g, y) = random_batch(9, 3, 3);
        let v = mmd_loss(&KernelSpec::Gaussian { bandwidth: 1e6 }, g.view(), y.view()).unwrap();
        assert!((v + 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_gradient_vanishes_at_perfect_fit() {
        let y = array![0.4, -0.3];
        let g = array![[0.4, 0.4, 0.4], [-0.3, -0.3, -0.3]];
        let grad = mmd_output_grad(&KernelSpec::Gaussian { bandwidth: 0.5 }, g.view(), y.view()).unwrap();
        assert!(grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smooth_kernel_gradients_match_finite_differences() {
        for kernel in [KernelSpec::Gaussian { bandwidth: 0.7 }, KernelSpec::Linear] {
            let (g, y) = random_batch(21, 4, 3);
            let grad = mmd_output_grad(&kernel, g.view(), y.view()).unwrap();
            let fd = finite_diff(|v| mmd_loss(&kernel, v, y.view()).unwrap(), &g, 1e-6);
            for (a, b) in grad.iter().zip(fd.iter()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-2), "{kernel:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn min_kernel_rejects_negative_values() {
        let g = array![[0.1, -0.1]];
        let y = array![0.5];
        assert!(mmd_loss(&KernelSpec::MinKernel, g.view(), y.view()).is_err());
        assert!(mmd_loss(&KernelSpec::Gaussian { bandwidth: 0.0 }, g.view(), y.view()).is_err());
    }

    #[test]
    fn min_kernel_offset_from_energy_is_constant() {
        let (mut g, mut y) = random_batch(33, 5, 4);
        g += 5.0;
        y += 5.0;
        let offset = |g: &Array2<f64>| {
            mmd_loss(&KernelSpec::MinKernel, g.view(), y.view()).unwrap()
                - 0.5 * energy_loss(g.view(), y.view()).unwrap()
        };
        let base = offset(&g);
        assert!((base + y.mean().unwrap()).abs() < 1e-12);
        let (noise, _) = random_batch(34, 5, 4);
        let moved = &g + &(noise * 0.5);
        assert!((offset(&moved) - base).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let (g, y) = random_batch(3, 4, 5);
        let perm_cols = g.select(ndarray::Axis(1), &[4, 2, 0, 1, 3]);
        let perm_rows = g.select(ndarray::Axis(0), &[2, 0, 3, 1]);
        let y_rows = y.select(ndarray::Axis(0), &[2, 0, 3, 1]);
        let base = energy_loss(g.view(), y.view()).unwrap();
        assert!((energy_loss(perm_cols.view(), y.view()).unwrap() - base).abs() < 1e-13);
        assert!((energy_loss(perm_rows.view(), y_rows.view()).unwrap() - base).abs() < 1e-13);
    }

    #[test]
    fn descent_along_negative_subgradient() {
        let (g, y) = random_batch(12, 4, 5);
        let grad = energy_loss_output_grad(g.view(), y.view()).unwrap();
        let before = energy_loss(g.view(), y.view()).unwrap();
        let after = energy_loss((&g - &(&grad * 1e-6)).view(), y.view()).unwrap();
        assert!(after <= before);
    }

    #[test]
    fn quadrature_basics() {
        let f = |t: f64| t.clamp(0.0, 1.0);
        assert_eq!(cramer_distance_quadrature(f, f, -1.0, 2.0, 100).unwrap(), 0.0);
        assert!(cramer_distance_quadrature(f, f, 1.0, 1.0, 100).is_err());
        let g = |t: f64| (t - 0.5).clamp(0.0, 1.0);
        let coarse = cramer_distance_quadrature(f, g, -1.0, 3.0, 2000).unwrap();
        let fine = cramer_distance_quadrature(f, g, -1.0, 3.0, 4000).unwrap();
        assert!((coarse - fine).abs() <= 1e-4);
        // 1/24 on each outer half-unit plus 1/8 on the overlap
        assert!((fine - 5.0 / 24.0).abs() < 1e-6);
    }

    #[test]
    fn population_risk_of_identical_cdfs_is_zero() {
        let f = |x: &[f64], t: f64| ((t - x[0]) / 2.0 + 0.5).clamp(0.0, 1.0);
        let xs = vec![vec![0.1], vec![-0.4]];
        assert_eq!(population_risk_quadrature(f, f, &xs, -3.0, 3.0, 500).unwrap(), 0.0);
        assert!(population_risk_quadrature(f, f, &[], -3.0, 3.0, 500).is_err());
    }
}
