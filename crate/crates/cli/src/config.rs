//! Experiment configuration, read from TOML and overridden from the command line.

use std::path::{Path, PathBuf};

use ndr_core::datagen::SimModel;
use ndr_core::net::{NetworkConfig, NoiseDist, NoiseSpec};
use ndr_core::sampler::SmoothingSpec;
use ndr_core::train::{EarlyStopping, NoiseSchedule, Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub width: usize,
    pub noise_dim: usize,
    pub layer_noise: usize,
    pub truncation: Option<f64>,
    pub weight_bound: Option<f64>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 100,
            noise_dim: 1,
            layer_noise: 0,
            truncation: None,
            weight_bound: None,
        }
    }
}

impl NetworkSection {
    pub fn to_config(&self, input_dim: usize) -> NetworkConfig {
        let mut c = NetworkConfig::new(self.depth, self.width, input_dim, self.noise_dim).with_layer_noise(self.layer_noise);
        if let Some(m) = self.truncation {
            c = c.with_truncation(m);
        }
        if let Some(b) = self.weight_bound {
            c = c.with_weight_bound(b);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub dist: NoiseKind,
    pub lo: f64,
    pub hi: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            dist: NoiseKind::Uniform,
            lo: 0.0,
            hi: 1.0,
        }
    }
}

impl NoiseSection {
    pub fn dist(&self) -> NoiseDist {
        match self.dist {
            NoiseKind::Uniform => NoiseDist::Uniform { lo: self.lo, hi: self.hi },
            NoiseKind::Gaussian => NoiseDist::Gaussian,
        }
    }

    pub fn spec(&self, net: &NetworkConfig) -> NoiseSpec {
        NoiseSpec::for_network(self.dist(), net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise replicates per observation (`m2`).
    pub m2: usize,
    /// Noise pool size; fresh noise every epoch when absent or `>= epochs`.
    pub m1: Option<usize>,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub early_stopping: bool,
    pub patience: usize,
    pub val_fraction: f64,
    pub min_delta: f64,
    pub pool_memory_cap_mb: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let es = EarlyStopping::default();
        Self {
            epochs: 2000,
            batch_size: 5000,
            m2: 50,
            m1: Some(200),
            lr: 0.01,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            early_stopping: true,
            patience: es.patience,
            val_fraction: es.val_fraction,
            min_delta: es.min_delta,
            pool_memory_cap_mb: 2048,
        }
    }
}

impl TrainSection {
    /// Training settings for one run with pool size `m1` and `m2` replicates.
    pub fn to_config(&self, m1: Option<usize>, m2: usize, seed: u64) -> TrainConfig {
        let schedule = match m1 {
            Some(m1) if m1 < self.epochs => NoiseSchedule::Pool { m1 },
            _ => NoiseSchedule::Fresh,
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            replicates: m2,
            schedule,
            learning_rate: self.lr,
            optimizer: match self.optimizer {
                OptimizerKind::Adam => Optimizer::adam(),
                OptimizerKind::Sgd => Optimizer::Sgd,
            },
            weight_decay: self.weight_decay,
            early_stopping: self.early_stopping.then_some(EarlyStopping {
                patience: self.patience,
                val_fraction: self.val_fraction,
                min_delta: self.min_delta,
            }),
            seed,
            pool_memory_cap: self.pool_memory_cap_mb << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub n_x: usize,
    pub grid_n: usize,
    pub k_cdf: usize,
    /// Draws per point for means, quantiles, intervals and densities.
    pub k_eval: usize,
    pub levels: Vec<f64>,
    pub coverage: f64,
    pub n_test: usize,
    pub density_floor: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            n_x: 2000,
            grid_n: 2000,
            k_cdf: 1000,
            k_eval: 1000,
            levels: vec![0.5, 0.25],
            coverage: 0.95,
            n_test: 2000,
            density_floor: 1e-6,
        }
    }
}

impl MetricsSection {
    pub fn smoothing(&self) -> SmoothingSpec {
        SmoothingSpec {
            density_floor: self.density_floor,
            ..SmoothingSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
    pub dtilde: Vec<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            m1: vec![20, 200, 2000],
            m2: vec![2, 10, 50],
            dtilde: vec![1, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySection {
    pub n: usize,
    pub m1: Vec<usize>,
    pub m2: Vec<usize>,
    /// Training length, batch size and early stopping for every decay run;
    /// the remaining settings come from `[train]`.
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stopping: bool,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self {
            n: 2000,
            m1: vec![2, 8, 32, 128],
            m2: vec![2],
            epochs: 1000,
            batch_size: 500,
            early_stopping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<String>,
    /// Noise replicates of the NDR fit.
    pub m2: usize,
    pub epochs: usize,
    pub early_stopping: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            models: SimModel::ALL.iter().filter(|m| **m != SimModel::M1bInt).map(|m| m.name().to_string()).collect(),
            m2: 2,
            epochs: 500,
            early_stopping: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealdataSection {
    pub path: Option<PathBuf>,
    pub response: String,
    pub iqr_factor: f64,
    pub fit_on_all: bool,
    pub k: usize,
}

impl Default for RealdataSection {
    fn default() -> Self {
        Self {
            path: None,
            response: "y".into(),
            iqr_factor: 1.5,
            fit_on_all: false,
            k: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub network: NetworkSection,
    pub noise: NoiseSection,
    pub train: TrainSection,
    pub metrics: MetricsSection,
    pub grid: GridSection,
    pub decay: DecaySection,
    pub compare: CompareSection,
    pub realdata: RealdataSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: SimModel::M2a.name().into(),
            n: 10_000,
            seeds: (0..20).collect(),
            network: NetworkSection::default(),
            noise: NoiseSection::default(),
            train: TrainSection::default(),
            metrics: MetricsSection::default(),
            grid: GridSection::default(),
            decay: DecaySection::default(),
            compare: CompareSection::default(),
            realdata: RealdataSection::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| bad(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn sim_model(&self) -> Result<SimModel, CliError> {
        self.model.parse().map_err(|e: ndr_core::Error| bad(e.to_string()))
    }

    /// Checks every field a run could touch before any run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = self.sim_model()?;
        for m in &self.compare.models {
            m.parse::<SimModel>().map_err(|e| bad(e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(bad("seed list is empty"));
        }
        if self.n < 3 {
            return Err(bad("n must be at least 3"));
        }
        let net = self.network.to_config(model.input_dim());
        net.validate().map_err(|e| bad(e.to_string()))?;
        self.noise.spec(&net).validate().map_err(|e| bad(e.to_string()))?;
        let t = &self.train;
        t.to_config(t.m1, t.m2, 0).validate(2).map_err(|e| bad(e.to_string()))?;
        if t.m1 == Some(0) {
            return Err(bad("m1 must be positive"));
        }
        let m = &self.metrics;
        if m.n_x == 0 || m.grid_n < 2 || m.k_cdf == 0 || m.k_eval < 2 || m.n_test == 0 {
            return Err(bad("metrics: n_x, k_cdf, n_test >= 1, grid_n, k_eval >= 2 required"));
        }
        if m.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || !(m.coverage > 0.0 && m.coverage < 1.0) {
            return Err(bad("metric levels and coverage must lie in (0, 1)"));
        }
        m.smoothing().validate().map_err(|e| bad(e.to_string()))?;
        let g = &self.grid;
        if g.m1.is_empty() || g.m2.is_empty() || g.dtilde.is_empty() {
            return Err(bad("grid lists must be nonempty"));
        }
        if g.m1.contains(&0) || g.m2.iter().any(|&k| k < 2) || g.dtilde.contains(&0) {
            return Err(bad("grid needs m1 >= 1, m2 >= 2, dtilde >= 1"));
        }
        let d = &self.decay;
        if d.m1.is_empty() || d.m2.is_empty() || d.m1.contains(&0) || d.m2.iter().any(|&k| k < 2) || d.n < 3 || d.epochs == 0 || d.batch_size == 0 {
            return Err(bad("decay needs n >= 3, m1 >= 1, m2 >= 2, epochs and batch_size >= 1"));
        }
        if self.compare.epochs == 0 || self.compare.models.is_empty() || self.compare.m2 < 2 {
            return Err(bad("compare needs models, epochs >= 1 and m2 >= 2"));
        }
        let r = &self.realdata;
        if !(r.iqr_factor >= 0.0) || r.k < 2 {
            return Err(bad("realdata needs iqr_factor >= 0 and k >= 2"));
        }
        Ok(())
    }
}
