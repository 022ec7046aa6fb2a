//! Least-squares and pinball-loss regression on the same network family,
//! trained by the same loop with the noise inputs removed.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{NetworkConfig, NetworkParams, NoiseDist, NoiseSpec};
use crate::train::{train_objective, Objective, TrainConfig, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegressionHead {
    SquaredError,
    Pinball(f64),
}

impl RegressionHead {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegressionHead::Pinball(tau) if !(tau > 0.0 && tau < 1.0) => {
                Err(Error::InvalidArgument(format!("pinball level must lie in (0, 1), got {tau}")))
            }
            _ => Ok(()),
        }
    }

    /// `lsq` or `qr@tau`.
    pub fn method_name(&self) -> String {
        match self {
            RegressionHead::SquaredError => "lsq".to_string(),
            RegressionHead::Pinball(tau) => format!("qr@{tau}"),
        }
    }
}

impl fmt::Display for RegressionHead {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.method_name())
    }
}

/// `mean(tau (y - pred)^+ + (1 - tau) (pred - y)^+)`.
pub fn pinball_loss(pred: &[f64], y: &[f64], tau: f64) -> Result<f64> {
    RegressionHead::Pinball(tau).validate()?;
    crate::error::dim_check("pinball predictions", y.len(), pred.len())?;
    if y.is_empty() {
        return Err(Error::EmptyData("no observations".into()));
    }
    let s: f64 = pred
        .iter()
        .zip(y)
        .map(|(&p, &t)| tau * (t - p).max(0.0) + (1.0 - tau) * (p - t).max(0.0))
        .sum();
    Ok(s / y.len() as f64)
}

impl Objective for RegressionHead {
    fn min_replicates(&self) -> usize {
        1
    }

    fn loss(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        let pred = g.column(0).to_vec();
        let y = y.to_vec();
        match *self {
            RegressionHead::SquaredError => {
                Ok(pred.iter().zip(&y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64)
            }
            RegressionHead::Pinball(tau) => pinball_loss(&pred, &y, tau),
        }
    }

    fn loss_and_grad(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Array2<f64>)> {
        let b = y.len() as f64;
        let loss = self.loss(g, y)?;
        let mut grad = Array2::zeros(g.raw_dim());
        for ((gr, &p), &t) in grad.column_mut(0).iter_mut().zip(g.column(0)).zip(y) {
            *gr = match *self {
                RegressionHead::SquaredError => 2.0 * (p - t) / b,
                RegressionHead::Pinball(tau) if p < t => -tau / b,
                RegressionHead::Pinball(tau) if p > t => (1.0 - tau) / b,
                RegressionHead::Pinball(_) => 0.0,
            };
        }
        Ok((loss, grad))
    }
}

/// A fitted deterministic predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub head: RegressionHead,
    pub net: NetworkParams,
}

impl Regressor {
    pub fn predict(&self, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let u = Array2::zeros((xs.nrows(), 0));
        self.net.forward_batch(xs, u.view())
    }
}

/// The noise-free counterpart of `config`.
pub fn deterministic_config(config: &NetworkConfig) -> NetworkConfig {
    NetworkConfig {
        noise_dim: 0,
        layer_noise: 0,
        ..*config
    }
}

/// Fits `head` with the shared training loop (one replicate, no noise).
/// Zero epochs returns the initial network.
pub fn train_baseline(
    head: RegressionHead,
    config: &NetworkConfig,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Regressor, TrainTrace)> {
    head.validate()?;
    let config = deterministic_config(config);
    let net = NetworkParams::init(config, cfg.seed)?;
    if cfg.epochs == 0 {
        return Ok((Regressor { head, net }, TrainTrace::default()));
    }
    let noise = NoiseSpec::for_network(NoiseDist::standard_uniform(), &config);
    let cfg = TrainConfig {
        replicates: 1,
        ..cfg.clone()
    };
    let (net, trace) = train_objective(net, data, &noise, &cfg, &head)?;
    Ok((Regressor { head, net }, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn pinball_examples() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(pinball_loss(&y, &y, 0.3).unwrap(), 0.0);
        let p = [0.0, 0.0, 0.0];
        let l1 = y.iter().map(|v: &f64| v.abs()).sum::<f64>() / 3.0;
        assert_relative_eq!(pinball_loss(&p, &y, 0.5).unwrap(), 0.5 * l1);
        assert!(pinball_loss(&p, &y, 1.0).is_err());
        assert!(pinball_loss(&p[..2], &y, 0.5).is_err());

        let mut r = rng::stream(4, &[]);
        for _ in 0..20 {
            let n = 1 + (r.random::<u32>() % 30) as usize;
            let tau: f64 = r.random_range(0.01..0.99);
            let pred: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let obs: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let mut s = 0.0;
            for i in 0..n {
                let d = obs[i] - pred[i];
                s += if d >= 0.0 { tau * d } else { (tau - 1.0) * d };
            }
            assert_relative_eq!(pinball_loss(&pred, &obs, tau).unwrap(), s / n as f64, max_relative = 1e-12);
        }
    }

    fn linear_data(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, &[]);
        let x = Array2::from_shape_fn((n, 1), |_| r.random::<f64>() * 2.0 - 1.0);
        let y = x.column(0).mapv(|v| 2.0 * v);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn squared_error_fits_a_line() {
        let config = NetworkConfig::new(2, 20, 1, 0);
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 0.01,
            early_stopping: None,
            seed: 2,
            ..TrainConfig::default()
        };
        let (reg, _) = train_baseline(RegressionHead::SquaredError, &config, &linear_data(256, 1), &cfg).unwrap();
        let test = linear_data(500, 9);
        let pred = reg.predict(test.x.view()).unwrap();
        let err = crate::metrics::mean_l2(pred.as_slice().unwrap(), test.y.as_slice().unwrap()).unwrap();
        assert!(err <= 0.02, "{err}");
    }

    #[test]
    fn zero_epochs_keeps_initial_predictions() {
        let config = NetworkConfig::new(2, 8, 1, 3);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let (reg, trace) = train_baseline(RegressionHead::Pinball(0.5), &config, &linear_data(10, 1), &cfg).unwrap();
        let init = NetworkParams::init(deterministic_config(&config), 5).unwrap();
        assert_eq!(reg.net, init);
        assert!(trace.epochs.is_empty());
        assert_eq!(reg.head.method_name(), "qr@0.5");
    }
}
