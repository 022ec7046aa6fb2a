//! Minibatch training.
//!
//! Each epoch shuffles the training rows, walks them in batches (the trailing
//! partial batch is kept), replicates every row `K` times with its own noise
//! vector, and takes one optimizer step on the batch objective. Noise comes
//! either fresh from a stream for every batch, or from a pool of `m1`
//! pre-drawn sets indexed by `(epoch mod m1, original row, replicate)`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{energy_loss, energy_loss_output_grad, mmd_loss, mmd_output_grad, KernelSpec};
use crate::net::{NetworkParams, NoiseSpec};
use crate::rng::{self, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub val_fraction: f64,
    pub min_delta: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self {
            patience: 20,
            val_fraction: 0.15,
            min_delta: 1e-5,
        }
    }
}

/// Where each batch's noise comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSchedule {
    /// Fresh draws for every batch.
    Fresh,
    /// `m1` pre-drawn noise sets reused cyclically across epochs.
    Pool { m1: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise replicates per observation.
    pub replicates: usize,
    pub schedule: NoiseSchedule,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub early_stopping: Option<EarlyStopping>,
    pub seed: u64,
    /// Largest noise pool, in bytes, that training may allocate.
    pub pool_memory_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 5000,
            replicates: 2,
            schedule: NoiseSchedule::Fresh,
            learning_rate: 0.01,
            optimizer: Optimizer::adam(),
            weight_decay: 0.0,
            early_stopping: Some(EarlyStopping::default()),
            seed: 0,
            pool_memory_cap: 2 << 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, min_replicates: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.replicates < min_replicates {
            return Err(Error::Config(format!(
                "objective needs at least {min_replicates} replicates, got {}",
                self.replicates
            )));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if let NoiseSchedule::Pool { m1 } = self.schedule {
            if m1 == 0 || m1 > self.epochs {
                return Err(Error::Config(format!("pool size m1 = {m1} must lie in [1, epochs = {}]", self.epochs)));
            }
        }
        if let Some(es) = &self.early_stopping {
            if !(es.val_fraction > 0.0 && es.val_fraction < 1.0) {
                return Err(Error::Config(format!("validation fraction {} outside (0, 1)", es.val_fraction)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when validation ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|r| r.val_loss).collect()
    }

    /// `epoch,train_loss,val_loss`; reproducible for a fixed seed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let val = r.val_loss.map_or(String::new(), |v| format!("{v:.17e}"));
            out.push_str(&format!("{},{:.17e},{}\n", r.epoch, r.train_loss, val));
        }
        out
    }

    /// `epoch,elapsed_ms`, kept apart from the reproducible trace.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,elapsed_ms\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{:.3}\n", r.epoch, r.elapsed_ms));
        }
        out
    }
}

/// Outcome of feeding one validation loss to the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopMonitor {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopMonitor {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = self.best_epoch.is_none() || val_loss < self.best - self.min_delta;
        if improved {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience && !improved,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

/// Replays a validation curve (epochs numbered from 1) through the monitor.
/// Returns the stopping epoch, if any, and the best epoch.
pub fn early_stop_monitor(val_losses: &[f64], patience: usize, min_delta: f64) -> (Option<usize>, usize) {
    let mut monitor = EarlyStopMonitor::new(patience, min_delta);
    for (i, &v) in val_losses.iter().enumerate() {
        if monitor.observe(i + 1, v).stop {
            return (Some(i + 1), monitor.best_epoch().unwrap_or(1));
        }
    }
    (None, monitor.best_epoch().unwrap_or(1))
}

/// Pre-drawn noise `U[b, i, k]` for `b < m1`, `i < n`, `k < K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePool {
    m1: usize,
    n: usize,
    replicates: usize,
    width: usize,
    values: Vec<f64>,
}

impl NoisePool {
    fn allocate(m1: usize, n: usize, replicates: usize, width: usize, cap: usize) -> Result<Self> {
        let count = m1
            .checked_mul(n)
            .and_then(|v| v.checked_mul(replicates))
            .and_then(|v| v.checked_mul(width))
            .ok_or(Error::PoolTooLarge {
                requested: usize::MAX,
                cap,
            })?;
        let bytes = count.saturating_mul(std::mem::size_of::<f64>());
        if bytes > cap {
            return Err(Error::PoolTooLarge { requested: bytes, cap });
        }
        Ok(Self {
            m1,
            n,
            replicates,
            width,
            values: vec![0.0; count],
        })
    }

    /// I.i.d. draws from the training noise stream in `(b, i, k)` order.
    pub fn sample(noise: &NoiseSpec, m1: usize, n: usize, replicates: usize, seed: u64, cap: usize) -> Result<Self> {
        let mut pool = Self::allocate(m1, n, replicates, noise.len(), cap)?;
        let mut rng = rng::stream(seed, &[tag::TRAIN_NOISE]);
        noise.fill(&mut rng, &mut pool.values);
        Ok(pool)
    }

    /// A pool holding exactly the draws fresh-noise training would consume,
    /// placed where pooled training with `m1 = epochs` reads them. Training
    /// on this pool reproduces fresh-noise training bit for bit.
    pub fn in_consumption_order(
        noise: &NoiseSpec,
        epochs: usize,
        n: usize,
        replicates: usize,
        batch_size: usize,
        seed: u64,
        cap: usize,
    ) -> Result<Self> {
        let width = noise.len();
        let mut pool = Self::allocate(epochs, n, replicates, width, cap)?;
        let mut perm_rng = rng::stream(seed, &[tag::PERMUTATION]);
        let mut noise_rng = rng::stream(seed, &[tag::TRAIN_NOISE]);
        let mut order: Vec<usize> = (0..n).collect();
        let mut buf = vec![0.0; width];
        for epoch in 1..=epochs {
            order.shuffle(&mut perm_rng);
            let b = epoch % epochs;
            for batch in order.chunks(batch_size) {
                for &i in batch {
                    for k in 0..replicates {
                        noise.fill(&mut noise_rng, &mut buf);
                        let at = pool.offset(b, i, k);
                        pool.values[at..at + width].copy_from_slice(&buf);
                    }
                }
            }
        }
        Ok(pool)
    }

    fn offset(&self, b: usize, i: usize, k: usize) -> usize {
        ((b * self.n + i) * self.replicates + k) * self.width
    }

    pub fn get(&self, b: usize, i: usize, k: usize) -> &[f64] {
        let at = self.offset(b, i, k);
        &self.values[at..at + self.width]
    }

    pub fn sets(&self) -> usize {
        self.m1
    }

    /// Total scalar noise draws held.
    pub fn draws(&self) -> usize {
        self.values.len()
    }
}

/// A batch objective over a `B x K` matrix of network outputs.
pub trait Objective {
    fn min_replicates(&self) -> usize;
    fn loss(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64>;
    fn loss_and_grad(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Array2<f64>)>;
}

/// Energy or kernel-MMD distributional objective. `shift` is added to both
/// outputs and responses before the kernel is applied (needed for the min
/// kernel, which is only defined on nonnegative values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionalObjective {
    pub kernel: KernelSpec,
    pub shift: f64,
}

impl DistributionalObjective {
    pub fn new(kernel: KernelSpec) -> Self {
        Self { kernel, shift: 0.0 }
    }

    fn shifted(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> (Array2<f64>, Array1<f64>) {
        (&g + self.shift, &y + self.shift)
    }
}

impl Objective for DistributionalObjective {
    fn min_replicates(&self) -> usize {
        2
    }

    fn loss(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
        match self.kernel {
            KernelSpec::Energy => energy_loss(g, y),
            _ if self.shift != 0.0 => {
                let (g, y) = self.shifted(g, y);
                mmd_loss(&self.kernel, g.view(), y.view())
            }
            _ => mmd_loss(&self.kernel, g, y),
        }
    }

    fn loss_and_grad(&self, g: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<(f64, Array2<f64>)> {
        match self.kernel {
            KernelSpec::Energy => Ok((energy_loss(g, y)?, energy_loss_output_grad(g, y)?)),
            _ => {
                let (g, y) = self.shifted(g, y);
                Ok((
                    mmd_loss(&self.kernel, g.view(), y.view())?,
                    mmd_output_grad(&self.kernel, g.view(), y.view())?,
                ))
            }
        }
    }
}

struct OptimizerState {
    kind: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        let (first, second) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        Self {
            kind,
            first,
            second,
            steps: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.steps += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for (((t, g), m), v) in theta
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *t -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Rows `rows` of `data` repeated `replicates` times each (`r = i * K + k`).
fn replicate_rows(x: &Array2<f64>, rows: &[usize], replicates: usize) -> Array2<f64> {
    let p = x.ncols();
    let mut out = Array2::zeros((rows.len() * replicates, p));
    for (bi, &i) in rows.iter().enumerate() {
        let src = x.row(i);
        for k in 0..replicates {
            out.row_mut(bi * replicates + k).assign(&src);
        }
    }
    out
}

/// Batch objective and its gradient with respect to the network parameters.
pub fn batch_gradient(
    net: &NetworkParams,
    objective: &dyn Objective,
    x_rep: ArrayView2<f64>,
    u: ArrayView2<f64>,
    y: ArrayView1<f64>,
    replicates: usize,
) -> Result<(f64, NetworkParams)> {
    let (out, cache) = net.forward_cached(x_rep, u)?;
    let g = out
        .into_shape_with_order((y.len(), replicates))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let (loss, grad) = objective.loss_and_grad(g.view(), y)?;
    let flat = grad
        .into_shape_with_order(y.len() * replicates)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((loss, net.backward(&cache, flat.view())?))
}

/// Objective value on `data` with fresh noise, evaluated in bounded chunks.
pub fn evaluate_objective(
    net: &NetworkParams,
    objective: &dyn Objective,
    data: &Dataset,
    noise: &NoiseSpec,
    replicates: usize,
    rng: &mut Rng,
) -> Result<f64> {
    const CHUNK: usize = 2048;
    let mut total = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for rows in idx.chunks(CHUNK) {
        let x_rep = replicate_rows(&data.x, rows, replicates);
        let u = noise.sample_matrix(rng, x_rep.nrows());
        let out = net.forward_batch(x_rep.view(), u.view())?;
        let g = out
            .into_shape_with_order((rows.len(), replicates))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let y = data.y.select(ndarray::Axis(0), rows);
        total += objective.loss(g.view(), y.view())? * rows.len() as f64;
    }
    Ok(total / data.len() as f64)
}

enum NoiseSource<'a> {
    Fresh(Rng),
    Pool(&'a NoisePool),
}

/// Splits off a seeded validation subset: `(train, validation)`.
pub fn validation_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::EmptyData(format!("validation split needs at least 2 rows, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::VALIDATION_SPLIT]));
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (val, train) = idx.split_at(n_val);
    Ok((data.select(train), data.select(val)))
}

/// Shared training loop behind the public entry points.
pub fn train_objective(
    net: NetworkParams,
    data: &Dataset,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    objective: &dyn Objective,
) -> Result<(NetworkParams, TrainTrace)> {
    train_inner(net, data, None, noise, cfg, objective, None)
}

/// Training with a caller-supplied validation set for early stopping
/// (instead of a split carved from `train`).
pub fn train_with_validation(
    net: NetworkParams,
    train: &Dataset,
    validation: &Dataset,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    objective: &dyn Objective,
) -> Result<(NetworkParams, TrainTrace)> {
    if cfg.early_stopping.is_none() {
        return Err(Error::Config("a validation set needs early stopping enabled".into()));
    }
    validation.ensure_nonempty("validation data")?;
    crate::error::dim_check("validation covariate width", train.dim(), validation.dim())?;
    train_inner(net, train, Some(validation), noise, cfg, objective, None)
}

fn train_inner(
    mut net: NetworkParams,
    data: &Dataset,
    explicit_val: Option<&Dataset>,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    external_pool: Option<&NoisePool>,
) -> Result<(NetworkParams, TrainTrace)> {
    cfg.validate(objective.min_replicates())?;
    net.config.validate()?;
    noise.validate()?;
    noise.check_network(&net.config)?;
    data.ensure_nonempty("training data")?;
    crate::error::dim_check("covariate width", net.config.input_dim, data.dim())?;

    let (train, val) = match &cfg.early_stopping {
        Some(_) if explicit_val.is_some() => (data.clone(), explicit_val.cloned()),
        Some(es) => {
            let (t, v) = validation_split(data, es.val_fraction, cfg.seed)?;
            (t, Some(v))
        }
        None => (data.clone(), None),
    };
    let n = train.len();
    let k = cfg.replicates;

    let owned_pool;
    let mut source = match (cfg.schedule, external_pool) {
        (_, Some(pool)) => {
            if pool.n != n || pool.replicates != k || pool.width != noise.len() {
                return Err(Error::Config("noise pool layout does not match the training data".into()));
            }
            NoiseSource::Pool(pool)
        }
        (NoiseSchedule::Fresh, None) => NoiseSource::Fresh(rng::stream(cfg.seed, &[tag::TRAIN_NOISE])),
        (NoiseSchedule::Pool { m1 }, None) => {
            owned_pool = NoisePool::sample(noise, m1, n, k, cfg.seed, cfg.pool_memory_cap)?;
            NoiseSource::Pool(&owned_pool)
        }
    };

    let mut perm_rng = rng::stream(cfg.seed, &[tag::PERMUTATION]);
    let mut optimizer = OptimizerState::new(cfg.optimizer, net.num_params());
    let mut monitor = cfg
        .early_stopping
        .map(|es| EarlyStopMonitor::new(es.patience, es.min_delta));
    let mut best: Option<NetworkParams> = None;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    let width = noise.len();
    let mut theta = net.flat();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut perm_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, rows) in order.chunks(cfg.batch_size).enumerate() {
            let x_rep = replicate_rows(&train.x, rows, k);
            let u = match &mut source {
                NoiseSource::Fresh(rng) => noise.sample_matrix(rng, rows.len() * k),
                NoiseSource::Pool(pool) => {
                    let b = epoch % pool.sets();
                    let mut u = Array2::zeros((rows.len() * k, width));
                    for (bi, &i) in rows.iter().enumerate() {
                        for kk in 0..k {
                            u.row_mut(bi * k + kk)
                                .as_slice_mut()
                                .expect("row-major")
                                .copy_from_slice(pool.get(b, i, kk));
                        }
                    }
                    u
                }
            };
            let y = train.y.select(ndarray::Axis(0), rows);
            let (loss, grads) = batch_gradient(&net, objective, x_rep.view(), u.view(), y.view(), k)?;
            let mut grad = grads.flat();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    what: if loss.is_finite() { "gradient" } else { "loss" },
                    epoch,
                    batch: batch_idx + 1,
                });
            }
            if cfg.weight_decay > 0.0 {
                for (g, t) in grad.iter_mut().zip(&theta) {
                    *g += cfg.weight_decay * t;
                }
            }
            optimizer.step(&mut theta, &grad, cfg.learning_rate);
            net.set_flat(&theta)?;
            if let Some(bound) = net.config.weight_bound {
                net.clip_in_place(bound);
                theta = net.flat();
            }
            epoch_loss += loss * rows.len() as f64;
        }
        let train_loss = epoch_loss / n as f64;

        let mut stop = false;
        let val_loss = match (&val, monitor.as_mut()) {
            (Some(v), Some(m)) => {
                // fixed validation noise across epochs
                let mut vrng = rng::stream(cfg.seed, &[tag::VALIDATION_NOISE]);
                let vl = evaluate_objective(&net, objective, v, noise, k, &mut vrng)?;
                if !vl.is_finite() {
                    return Err(Error::NonFinite {
                        what: "validation loss",
                        epoch,
                        batch: 0,
                    });
                }
                let decision = m.observe(epoch, vl);
                if decision.improved {
                    best = Some(net.clone());
                }
                stop = decision.stop;
                Some(vl)
            }
            _ => None,
        };

        trace.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if stop {
            trace.stopped_early = true;
            break;
        }
    }

    if let Some(m) = &monitor {
        trace.best_epoch = m.best_epoch();
    }
    Ok((best.unwrap_or(net), trace))
}

/// Training with fresh noise for every batch.
pub fn train_algorithm1(
    net: NetworkParams,
    data: &Dataset,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    kernel: KernelSpec,
) -> Result<(NetworkParams, TrainTrace)> {
    let cfg = TrainConfig {
        schedule: NoiseSchedule::Fresh,
        ..cfg.clone()
    };
    train_objective(net, data, noise, &cfg, &DistributionalObjective::new(kernel))
}

/// Training that reuses `m1` pre-drawn noise sets.
pub fn train_algorithm2(
    net: NetworkParams,
    data: &Dataset,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    kernel: KernelSpec,
    m1: usize,
) -> Result<(NetworkParams, TrainTrace)> {
    let cfg = TrainConfig {
        schedule: NoiseSchedule::Pool { m1 },
        ..cfg.clone()
    };
    train_objective(net, data, noise, &cfg, &DistributionalObjective::new(kernel))
}

/// Pooled training on a caller-supplied pool.
pub fn train_with_pool(
    net: NetworkParams,
    data: &Dataset,
    noise: &NoiseSpec,
    cfg: &TrainConfig,
    objective: &dyn Objective,
    pool: &NoisePool,
) -> Result<(NetworkParams, TrainTrace)> {
    let cfg = TrainConfig {
        schedule: NoiseSchedule::Pool { m1: pool.sets() },
        ..cfg.clone()
    };
    train_inner(net, data, None, noise, &cfg, objective, Some(pool))
}
