//! Stochastic fully connected ReLU networks.
//!
//! The network takes a covariate `x` and a noise vector `u` and returns a
//! scalar. Noise enters the first layer (`noise_dim` components) and,
//! optionally, every later hidden layer (`layer_noise` components each). With
//! `layer_noise = 0` this is the plain first-layer-noise architecture with all
//! hidden layers of width `width`; otherwise every hidden layer emits
//! `width - layer_noise` units, which are concatenated with fresh noise before
//! the next layer so that each hidden-to-hidden map again sees `width` inputs.
//!
//! Noise vectors are laid out as `[u_1 (noise_dim), u_2 (layer_noise), ...,
//! u_L (layer_noise)]`, so their length is `noise_dim + (depth - 1) * layer_noise`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{dim_check, Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkConfig {
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    /// Covariate dimension.
    pub input_dim: usize,
    /// Noise components fed to the first layer.
    pub noise_dim: usize,
    /// Noise components injected before each hidden layer after the first.
    pub layer_noise: usize,
    /// Output truncation level; `None` leaves the output untouched.
    pub truncation: Option<f64>,
    /// Entrywise bound on weights and biases; `None` leaves them free.
    pub weight_bound: Option<f64>,
}

impl NetworkConfig {
    pub fn new(depth: usize, width: usize, input_dim: usize, noise_dim: usize) -> Self {
        Self {
            depth,
            width,
            input_dim,
            noise_dim,
            layer_noise: 0,
            truncation: None,
            weight_bound: None,
        }
    }

    pub fn with_layer_noise(mut self, layer_noise: usize) -> Self {
        self.layer_noise = layer_noise;
        self
    }

    pub fn with_truncation(mut self, m: f64) -> Self {
        self.truncation = Some(m);
        self
    }

    pub fn with_weight_bound(mut self, b: f64) -> Self {
        self.weight_bound = Some(b);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "depth, width and input_dim must be positive (got {}, {}, {})",
                self.depth, self.width, self.input_dim
            )));
        }
        if self.layer_noise > 0 && self.layer_noise >= self.width {
            return Err(Error::Config(format!(
                "layer_noise {} must be smaller than width {}",
                self.layer_noise, self.width
            )));
        }
        if let Some(m) = self.truncation {
            if !(m > 0.0) {
                return Err(Error::Config(format!("truncation must be positive, got {m}")));
            }
        }
        if let Some(b) = self.weight_bound {
            if !(b > 0.0) {
                return Err(Error::Config(format!("weight bound must be positive, got {b}")));
            }
        }
        Ok(())
    }

    /// Units produced by each hidden layer.
    pub fn emitted_width(&self) -> usize {
        self.width - self.layer_noise
    }

    /// Length of one noise vector.
    pub fn noise_len(&self) -> usize {
        self.noise_dim + (self.depth - 1) * self.layer_noise
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let emit = self.emitted_width();
        let mut shapes = Vec::with_capacity(self.depth + 1);
        shapes.push((emit, self.input_dim + self.noise_dim));
        for _ in 1..self.depth {
            shapes.push((emit, emit + self.layer_noise));
        }
        shapes.push((1, emit));
        shapes
    }

    /// Column range of the noise vector consumed by hidden layer `layer` (0-based).
    fn noise_columns(&self, layer: usize) -> std::ops::Range<usize> {
        if layer == 0 {
            0..self.noise_dim
        } else {
            let start = self.noise_dim + (layer - 1) * self.layer_noise;
            start..start + self.layer_noise
        }
    }
}

/// Distribution of each noise component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseDist {
    Uniform { lo: f64, hi: f64 },
    Gaussian,
}

impl NoiseDist {
    pub fn standard_uniform() -> Self {
        NoiseDist::Uniform { lo: 0.0, hi: 1.0 }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            NoiseDist::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            NoiseDist::Gaussian => rng.sample(StandardNormal),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            NoiseDist::Uniform { lo, hi } => format!("uniform({lo},{hi})"),
            NoiseDist::Gaussian => "gaussian".to_string(),
        }
    }
}

/// Auxiliary noise law together with the layout it must fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub dist: NoiseDist,
    pub first_layer: usize,
    pub per_layer: usize,
    /// Number of hidden layers, which fixes how many per-layer blocks exist.
    pub depth: usize,
}

impl NoiseSpec {
    pub fn for_network(dist: NoiseDist, config: &NetworkConfig) -> Self {
        Self {
            dist,
            first_layer: config.noise_dim,
            per_layer: config.layer_noise,
            depth: config.depth,
        }
    }

    pub fn len(&self) -> usize {
        self.first_layer + self.depth.saturating_sub(1) * self.per_layer
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if let NoiseDist::Uniform { lo, hi } = self.dist {
            if !(lo < hi) {
                return Err(Error::Config(format!("uniform noise needs lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn check_network(&self, config: &NetworkConfig) -> Result<()> {
        dim_check("noise first-layer width", config.noise_dim, self.first_layer)?;
        dim_check("noise per-layer width", config.layer_noise, self.per_layer)?;
        dim_check("noise depth", config.depth, self.depth)
    }

    pub fn fill(&self, rng: &mut Rng, out: &mut [f64]) {
        for v in out {
            *v = self.dist.sample(rng);
        }
    }

    /// `rows` noise vectors as a matrix.
    pub fn sample_matrix(&self, rng: &mut Rng, rows: usize) -> Array2<f64> {
        let mut m = Array2::zeros((rows, self.len()));
        self.fill(rng, m.as_slice_mut().expect("standard layout"));
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Output-by-input weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    first_input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    noise: Array2<f64>,
    raw: Array1<f64>,
}

impl ForwardCache {
    /// Network outputs before truncation.
    pub fn raw_output(&self) -> &Array1<f64> {
        &self.raw
    }
}

pub fn truncate(z: f64, m: f64) -> f64 {
    z.abs().min(m) * sign(z)
}

/// Sign with `sign(0) = 0`.
pub fn sign(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else if z < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn relu_in_place(z: &mut Array2<f64>) {
    // NaN must survive so that divergence is detected upstream.
    z.mapv_inplace(|v| if v < 0.0 { 0.0 } else { v });
}

impl NetworkParams {
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(r, c)| Layer {
                weight: Array2::zeros((r, c)),
                bias: Array1::zeros(r),
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Uniform(+-sqrt(6 / fan_in)) weights, zero biases, clamped to the weight
    /// bound when one is configured.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng::stream(seed, &[rng::tag::INIT]);
        for layer in &mut params.layers {
            let fan_in = layer.weight.ncols().max(1);
            let scale = (6.0 / fan_in as f64).sqrt();
            for w in layer.weight.iter_mut() {
                *w = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        if let Some(b) = config.weight_bound {
            params.clip_in_place(b);
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config).expect("config already validated")
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    /// Checks every weight and bias against the shapes implied by the config.
    pub fn audit_shapes(&self) -> Result<()> {
        let shapes = self.config.layer_shapes();
        dim_check("layer count", shapes.len(), self.layers.len())?;
        for (layer, &(r, c)) in self.layers.iter().zip(&shapes) {
            dim_check("weight rows", r, layer.weight.nrows())?;
            dim_check("weight cols", c, layer.weight.ncols())?;
            dim_check("bias length", r, layer.bias.len())?;
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All weights and biases, layer by layer, weights row-major before bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        dim_check("flat parameter vector", self.num_params(), values.len())?;
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn clip_in_place(&mut self, bound: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v.clamp(-bound, bound));
            l.bias.mapv_inplace(|v| v.clamp(-bound, bound));
        }
    }

    /// Entrywise projection onto `[-bound, bound]`.
    pub fn clipped(&self, bound: f64) -> Result<Self> {
        if !(bound > 0.0) {
            return Err(Error::InvalidArgument(format!("clip bound must be positive, got {bound}")));
        }
        let mut out = self.clone();
        out.clip_in_place(bound);
        Ok(out)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Network output for one covariate/noise pair.
    pub fn forward(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let uv = ArrayView2::from_shape((1, u.len()), u).expect("row view");
        Ok(self.forward_batch(xv, uv)?[0])
    }

    /// Row-wise forward pass.
    pub fn forward_batch(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward_cached(x, u)?.0)
    }

    fn check_inputs(&self, x: &ArrayView2<f64>, u: &ArrayView2<f64>) -> Result<()> {
        dim_check("covariate width", self.config.input_dim, x.ncols())?;
        dim_check("noise width", self.config.noise_len(), u.ncols())?;
        dim_check("noise rows", x.nrows(), u.nrows())
    }

    /// Forward pass returning outputs together with the activations needed by
    /// [`NetworkParams::backward`].
    pub fn forward_cached(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_inputs(&x, &u)?;
        let cfg = &self.config;
        let rows = x.nrows();
        let p = cfg.input_dim;

        let mut first_input = Array2::zeros((rows, p + cfg.noise_dim));
        first_input.slice_mut(s![.., ..p]).assign(&x);
        first_input
            .slice_mut(s![.., p..])
            .assign(&u.slice(s![.., cfg.noise_columns(0)]));

        let emit = cfg.emitted_width();
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(cfg.depth);
        for (j, layer) in self.layers[..cfg.depth].iter().enumerate() {
            let mut z = if j == 0 {
                first_input.dot(&layer.weight.t())
            } else {
                let mut z = hidden[j - 1].dot(&layer.weight.slice(s![.., ..emit]).t());
                if cfg.layer_noise > 0 {
                    let block = u.slice(s![.., cfg.noise_columns(j)]);
                    ndarray::linalg::general_mat_mul(
                        1.0,
                        &block,
                        &layer.weight.slice(s![.., emit..]).t(),
                        1.0,
                        &mut z,
                    );
                }
                z
            };
            z += &layer.bias;
            relu_in_place(&mut z);
            hidden.push(z);
        }

        let out_layer = &self.layers[cfg.depth];
        let raw = hidden[cfg.depth - 1].dot(&out_layer.weight.row(0)) + out_layer.bias[0];
        let out = match cfg.truncation {
            Some(m) => raw.mapv(|z| truncate(z, m)),
            None => raw.clone(),
        };
        let cache = ForwardCache {
            first_input,
            hidden,
            noise: u.to_owned(),
            raw,
        };
        Ok((out, cache))
    }

    /// Gradient of `sum_r upstream[r] * g(x_r, u_r)` with respect to every
    /// parameter. ReLU has derivative 0 at 0; truncation passes the gradient
    /// strictly inside `(-M, M)` and blocks it outside.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView1<f64>) -> Result<NetworkParams> {
        dim_check("upstream gradient", cache.raw.len(), upstream.len())?;
        let cfg = &self.config;
        let depth = cfg.depth;
        let emit = cfg.emitted_width();
        let mut grads = self.zeros_like();

        let mut delta = upstream.to_owned();
        if let Some(m) = cfg.truncation {
            for (d, r) in delta.iter_mut().zip(cache.raw.iter()) {
                if r.abs() >= m {
                    *d = 0.0;
                }
            }
        }

        let last = &cache.hidden[depth - 1];
        grads.layers[depth].weight.row_mut(0).assign(&last.t().dot(&delta));
        grads.layers[depth].bias[0] = delta.sum();

        let w_out = self.layers[depth].weight.row(0);
        let mut dz = delta
            .view()
            .insert_axis(Axis(1))
            .dot(&w_out.insert_axis(Axis(0)));
        mask_by_active(&mut dz, last);

        for j in (1..depth).rev() {
            let prev = &cache.hidden[j - 1];
            let g = &mut grads.layers[j];
            g.weight.slice_mut(s![.., ..emit]).assign(&dz.t().dot(prev));
            if cfg.layer_noise > 0 {
                let block = cache.noise.slice(s![.., cfg.noise_columns(j)]);
                g.weight.slice_mut(s![.., emit..]).assign(&dz.t().dot(&block));
            }
            g.bias.assign(&dz.sum_axis(Axis(0)));
            let mut next = dz.dot(&self.layers[j].weight.slice(s![.., ..emit]));
            mask_by_active(&mut next, prev);
            dz = next;
        }

        grads.layers[0].weight.assign(&dz.t().dot(&cache.first_input));
        grads.layers[0].bias.assign(&dz.sum_axis(Axis(0)));
        Ok(grads)
    }

    /// Per-sample gradient of `upstream * g(x, u)`.
    pub fn backward_single(&self, x: &[f64], u: &[f64], upstream: f64) -> Result<NetworkParams> {
        let xv = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let uv = ArrayView2::from_shape((1, u.len()), u).expect("row view");
        let (_, cache) = self.forward_cached(xv, uv)?;
        self.backward(&cache, ndarray::aview1(&[upstream]))
    }

    /// Text serialization: a header line `L N p d~ N_s M B` (`off` for an
    /// inactive truncation or bound), then one line per weight row followed by
    /// one bias line, layer by layer, with 17 significant digits.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let opt = |v: Option<f64>| v.map_or_else(|| "off".to_string(), |x| format!("{x:.16e}"));
        let mut out = format!(
            "{} {} {} {} {} {} {}\n",
            c.depth,
            c.width,
            c.input_dim,
            c.noise_dim,
            c.layer_noise,
            opt(c.truncation),
            opt(c.weight_bound)
        );
        for layer in &self.layers {
            for row in layer.weight.rows() {
                write_row(&mut out, row.iter());
            }
            write_row(&mut out, layer.bias.iter());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty parameter file".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!("header needs 7 fields, found {}", fields.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let opt = |s: &str| -> Result<Option<f64>> {
            if s == "off" {
                Ok(None)
            } else {
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::Parse(format!("{s:?}: {e}")))
            }
        };
        let config = NetworkConfig {
            depth: int(fields[0])?,
            width: int(fields[1])?,
            input_dim: int(fields[2])?,
            noise_dim: int(fields[3])?,
            layer_noise: int(fields[4])?,
            truncation: opt(fields[5])?,
            weight_bound: opt(fields[6])?,
        };
        let mut params = Self::zeros(config)?;
        let values = lines
            .flat_map(str::split_whitespace)
            .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        params.set_flat(&values)?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:.16e}");
    }
    out.push('\n');
}

fn mask_by_active(grad: &mut Array2<f64>, activation: &Array2<f64>) {
    ndarray::Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}
