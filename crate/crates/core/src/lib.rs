//! Neural generative distributional regression.
//!
//! A stochastic ReLU network `g(x, u)` is trained so that `g(x, U)` follows the
//! conditional law of `Y` given `X = x`, by minimizing an empirical
//! energy-distance (or kernel MMD) objective over replicated noise draws. The
//! fitted network is then used as a conditional sampler, and moments,
//! quantiles, prediction intervals, densities and scores are read off the
//! generated samples.
//!
//! Module map:
//!
//! * [`net`]: the stochastic network, batched forward pass and exact gradients.
//! * [`loss`]: energy and kernel-MMD objectives with their output gradients,
//!   plus quadrature references for the Cramér identity.
//! * [`train`]: minibatch training with fresh noise or a reused noise pool.
//! * [`sampler`]: conditional sampling and downstream estimators.
//! * [`metrics`]: CDF, mean, quantile, interval and likelihood metrics.
//! * [`datagen`]: synthetic models with closed-form conditional oracles.
//! * [`baseline`]: least-squares and pinball regression on the same network.
//! * [`dataio`]: CSV ingestion, IQR filtering, splitting and scaling.

pub mod baseline;
pub mod data;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod stats;
pub mod train;

pub use ndarray;

pub use data::Dataset;
pub use datagen::SimModel;
pub use error::{Error, Result};
pub use loss::KernelSpec;
pub use net::{NetworkConfig, NetworkParams, NoiseDist, NoiseSpec};
pub use sampler::{ConditionalDraws, ConditionalSampler, SmoothingSpec};
pub use train::{Optimizer, TrainConfig, TrainTrace};
