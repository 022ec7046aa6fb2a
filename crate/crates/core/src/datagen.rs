//! Synthetic models with closed-form conditional oracles.
//!
//! Covariates are i.i.d. `Uniform[-1, 1]` in every coordinate.
//!
//! | model    | p | law of `Y` given `x`                                         |
//! |----------|---|--------------------------------------------------------------|
//! | `M1a`    | 1 | `sin 3x + (1 - 0.7 cos 4x) U`, `U ~ U[-1, 1]`                |
//! | `M1bAdd` | 5 | additive location-scale in `x1, x2, x3`                      |
//! | `M1bInt` | 5 | `x1 x2 + (1 - x3 x4 / 2) U`                                  |
//! | `M2a`    | 1 | density `1/2 - v t / 16` on `[-1, 1]`, `v = 1 + x + 4x^2`    |
//! | `M2b`    | 1 | `exp(-(v U + U^2) / 4)`, `U ~ U[0, 1]`                       |
//! | `M3`     | 1 | equal mixture of `N(1/2 + cos 4 pi x, 1/2)` and `N(1/2 + cos^2 4 pi x, 1/2)` |

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::data::Dataset;
use crate::error::{dim_check, Error, Result};
use crate::rng::{self, tag, Rng};
use crate::sampler::ConditionalDraws;
use crate::special::{bisect_increasing, normal_cdf, normal_pdf};

/// `Y` is decreasing in its latent uniform, so the distribution function is
/// one minus the latent-uniform inverse `u(t) = (-v + sqrt(v^2 - 16 log t)) / 2`,
/// supported on `[exp(-(v + 1) / 4), 1]`.
pub const M2B_CDF_BRANCH: &str = "one-minus-latent-inverse";

const M3_SD: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimModel {
    M1a,
    M1bAdd,
    M1bInt,
    M2a,
    M2b,
    M3,
}

impl SimModel {
    pub const ALL: [SimModel; 6] = [
        SimModel::M1a,
        SimModel::M1bAdd,
        SimModel::M1bInt,
        SimModel::M2a,
        SimModel::M2b,
        SimModel::M3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SimModel::M1a => "m1a",
            SimModel::M1bAdd => "m1b-add",
            SimModel::M1bInt => "m1b-int",
            SimModel::M2a => "m2a",
            SimModel::M2b => "m2b",
            SimModel::M3 => "m3",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SimModel::M1bAdd | SimModel::M1bInt => 5,
            _ => 1,
        }
    }

    /// Interval holding the conditional support for every admissible `x`
    /// (for `M3`, six standard deviations past the extreme means).
    pub fn y_range(&self) -> (f64, f64) {
        match self {
            SimModel::M1a => (-2.7, 2.7),
            SimModel::M1bAdd | SimModel::M1bInt => (-2.5, 2.5),
            SimModel::M2a => (-1.0, 1.0),
            SimModel::M2b => (0.0, 1.0),
            SimModel::M3 => (-0.5 - 6.0 * M3_SD, 1.5 + 6.0 * M3_SD),
        }
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        dim_check("covariate width", self.input_dim(), x.len())
    }

    fn location_scale(&self, x: &[f64]) -> Option<(f64, f64)> {
        match self {
            SimModel::M1a => Some(((3.0 * x[0]).sin(), 1.0 - 0.7 * (4.0 * x[0]).cos())),
            SimModel::M1bAdd => Some((
                (3.0 * x[0]).sin() + 0.5 * (3.0 * x[1]).sin(),
                1.0 - 0.3 * x[0].cos() - 0.2 * (2.0 * x[2]).cos(),
            )),
            SimModel::M1bInt => Some((x[0] * x[1], 1.0 - 0.5 * x[2] * x[3])),
            _ => None,
        }
    }

    fn m3_means(x: f64) -> (f64, f64) {
        let c = (4.0 * PI * x).cos();
        (0.5 + c, 0.5 + c * c)
    }

    /// One draw of `Y` given `x`.
    pub fn sample_y(&self, x: &[f64], rng: &mut Rng) -> f64 {
        if let Some((mu, sigma)) = self.location_scale(x) {
            return mu + sigma * (2.0 * rng.random::<f64>() - 1.0);
        }
        match self {
            SimModel::M2a => m2a_quantile(v_of(x[0]), rng.random::<f64>()),
            SimModel::M2b => {
                let v = v_of(x[0]);
                let u = rng.random::<f64>();
                (-(v * u + u * u) / 4.0).exp()
            }
            SimModel::M3 => {
                let (a, b) = Self::m3_means(x[0]);
                let mean = if rng.random::<bool>() { a } else { b };
                let z: f64 = rng.sample(StandardNormal);
                mean + M3_SD * z
            }
            _ => unreachable!(),
        }
    }

    pub fn sample_x(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[tag::COVARIATES]);
        Array2::from_shape_fn((n, self.input_dim()), |_| 2.0 * r.random::<f64>() - 1.0)
    }

    /// `n` i.i.d. pairs.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        let x = self.sample_x(n, seed);
        let mut r = rng::stream(seed, &[tag::DATA]);
        let y = Array1::from_iter(x.rows().into_iter().map(|row| self.sample_y(row.as_slice().expect("row-major"), &mut r)));
        Dataset::new(x, y)
    }

    pub fn true_cdf(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_x(x)?;
        Ok(self.cdf_unchecked(x, y))
    }

    fn cdf_unchecked(&self, x: &[f64], y: f64) -> f64 {
        if let Some((mu, sigma)) = self.location_scale(x) {
            return (((y - mu) / sigma + 1.0) / 2.0).clamp(0.0, 1.0);
        }
        match self {
            SimModel::M2a => {
                if y <= -1.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    ((y + 1.0) * (0.5 + (1.0 - y) * v_of(x[0]) / 32.0)).clamp(0.0, 1.0)
                }
            }
            SimModel::M2b => {
                let v = v_of(x[0]);
                if y >= 1.0 {
                    1.0
                } else if y <= (-(v + 1.0) / 4.0).exp() {
                    0.0
                } else {
                    let u = (-v + (v * v - 16.0 * y.ln()).sqrt()) / 2.0;
                    (1.0 - u).clamp(0.0, 1.0)
                }
            }
            SimModel::M3 => {
                let (a, b) = Self::m3_means(x[0]);
                0.5 * normal_cdf((y - a) / M3_SD) + 0.5 * normal_cdf((y - b) / M3_SD)
            }
            _ => unreachable!(),
        }
    }

    pub fn true_quantile(&self, x: &[f64], alpha: f64) -> Result<f64> {
        self.check_x(x)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {alpha}")));
        }
        if let Some((mu, sigma)) = self.location_scale(x) {
            return Ok(mu + sigma * (2.0 * alpha - 1.0));
        }
        Ok(match self {
            SimModel::M2a => m2a_quantile(v_of(x[0]), alpha),
            SimModel::M2b => {
                let v = v_of(x[0]);
                let u = 1.0 - alpha;
                (-(v * u + u * u) / 4.0).exp()
            }
            SimModel::M3 => {
                let (a, b) = Self::m3_means(x[0]);
                let lo = a.min(b) - 8.0 * M3_SD;
                let hi = a.max(b) + 8.0 * M3_SD;
                bisect_increasing(|t| self.cdf_unchecked(x, t), alpha, lo, hi, 1e-12)
            }
            _ => unreachable!(),
        })
    }

    pub fn true_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        if let Some((mu, _)) = self.location_scale(x) {
            return Ok(mu);
        }
        Ok(match self {
            SimModel::M2a => -v_of(x[0]) / 24.0,
            SimModel::M2b => {
                let v = v_of(x[0]);
                let s = v / (2.0 * SQRT_2);
                2.0 * PI.sqrt() * (normal_cdf(s + 1.0 / SQRT_2) - normal_cdf(s)) * (v * v / 16.0).exp()
            }
            SimModel::M3 => {
                let (a, b) = Self::m3_means(x[0]);
                0.5 * (a + b)
            }
            _ => unreachable!(),
        })
    }

    pub fn true_density(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_x(x)?;
        if let Some((mu, sigma)) = self.location_scale(x) {
            return Ok(if (y - mu).abs() <= sigma { 0.5 / sigma } else { 0.0 });
        }
        Ok(match self {
            SimModel::M2a => {
                if y.abs() <= 1.0 {
                    0.5 - v_of(x[0]) * y / 16.0
                } else {
                    0.0
                }
            }
            SimModel::M2b => {
                let v = v_of(x[0]);
                if y > (-(v + 1.0) / 4.0).exp() && y <= 1.0 {
                    4.0 / (y * (v * v - 16.0 * y.ln()).sqrt())
                } else {
                    0.0
                }
            }
            SimModel::M3 => {
                let (a, b) = Self::m3_means(x[0]);
                0.5 * (normal_pdf((y - a) / M3_SD) + normal_pdf((y - b) / M3_SD)) / M3_SD
            }
            _ => unreachable!(),
        })
    }
}

fn v_of(x: f64) -> f64 {
    1.0 + x + 4.0 * x * x
}

fn m2a_quantile(v: f64, alpha: f64) -> f64 {
    (8.0 - (64.0 + v * (16.0 + v - 32.0 * alpha)).sqrt()) / v
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match key.as_str() {
            "m1a" | "1a" => SimModel::M1a,
            "m1b-add" | "m1badd" | "m1b" | "1b" => SimModel::M1bAdd,
            "m1b-int" | "m1bint" => SimModel::M1bInt,
            "m2a" | "2a" => SimModel::M2a,
            "m2b" | "2b" => SimModel::M2b,
            "m3" | "3" => SimModel::M3,
            _ => return Err(Error::Config(format!("unknown model {s:?}"))),
        })
    }
}

/// Samples the true conditional law; the reference "perfect" estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleSampler {
    pub model: SimModel,
}

impl ConditionalDraws for OracleSampler {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn draw_with(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) -> Result<()> {
        self.model.check_x(x)?;
        for v in out {
            *v = self.model.sample_y(x, rng);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m1a_noise_is_bounded() {
        let d = SimModel::M1a.sample(5000, 1).unwrap();
        for (x, y) in d.x.column(0).iter().zip(d.y.iter()) {
            assert!((y - (3.0 * x).sin()).abs() <= 1.0 - 0.7 * (4.0 * x).cos());
        }
    }

    #[test]
    fn m2a_examples() {
        assert_eq!(SimModel::M2a.true_cdf(&[0.3], 1.0).unwrap(), 1.0);
        let t = 8.0 - 65f64.sqrt();
        assert!((SimModel::M2a.true_quantile(&[0.0], 0.5).unwrap() - t).abs() < 1e-15);
        assert!((SimModel::M2a.true_cdf(&[0.0], t).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(SimModel::M2a.true_mean(&[0.0]).unwrap(), -1.0 / 24.0);
    }

    #[test]
    fn m2a_conditional_mean_by_monte_carlo() {
        let mut r = rng::stream(5, &[]);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| SimModel::M2a.sample_y(&[0.0], &mut r)).collect();
        let (m, s) = crate::stats::mean_std(&draws);
        assert!((m + 1.0 / 24.0).abs() <= 3.0 * s / (n as f64).sqrt());
    }

    #[test]
    fn symmetric_models_have_centered_medians() {
        for x in [-0.9f64, -0.2, 0.0, 0.5] {
            let mu = (3.0 * x).sin();
            assert!((SimModel::M1a.true_cdf(&[x], mu).unwrap() - 0.5).abs() < 1e-15);
            assert!((SimModel::M1a.true_quantile(&[x], 0.5).unwrap() - mu).abs() < 1e-15);
        }
        assert_eq!(SimModel::M1bInt.true_mean(&[0.0; 5]).unwrap(), 0.0);
    }

    #[test]
    fn m2b_support_and_orientation() {
        let d = SimModel::M2b.sample(20_000, 3).unwrap();
        for (x, y) in d.x.column(0).iter().zip(d.y.iter()) {
            let lo = (-(v_of(*x) + 1.0) / 4.0).exp();
            assert!(*y <= 1.0 && *y >= lo);
        }
        // nondecreasing from 0 at the lower support end to 1 at the top
        let x = [0.4];
        let lo = (-(v_of(0.4) + 1.0) / 4.0).exp();
        assert_eq!(SimModel::M2b.true_cdf(&x, lo).unwrap(), 0.0);
        assert_eq!(SimModel::M2b.true_cdf(&x, 1.0).unwrap(), 1.0);
        let mid = SimModel::M2b.true_cdf(&x, 0.5 * (lo + 1.0)).unwrap();
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn bad_inputs() {
        assert!(SimModel::M1bAdd.true_cdf(&[0.0], 0.0).is_err());
        assert!(SimModel::M3.true_quantile(&[0.0], 1.0).is_err());
        assert!(SimModel::M1a.sample(0, 1).is_err());
        assert!("m9".parse::<SimModel>().is_err());
        for m in SimModel::ALL {
            assert_eq!(m.name().parse::<SimModel>().unwrap(), m);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = SimModel::M3.sample(50, 7).unwrap();
        assert_eq!(a, SimModel::M3.sample(50, 7).unwrap());
        assert_ne!(a, SimModel::M3.sample(50, 8).unwrap());
    }
}
