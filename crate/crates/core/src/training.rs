//! Stochastic maximum likelihood with persistent chains.
//!
//! Each update clamps the minibatch visibles onto per-datapoint hidden chains
//! (positive phase), advances a set of free persistent chains (negative
//! phase), and moves the parameters along the centered moment difference.
//! Offsets follow running averages of unit activity; every offset change is
//! compensated in the biases so the distribution is untouched by it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::constructor::regularization_schedule;
use crate::data::{pack_bits, unpack_bits, BinaryDataset, ToyKind};
use crate::error::{Error, Result};
use crate::evaluation::{exact_log_z_with, test_log_likelihood, LikelihoodMode, LogZRoute};
use crate::model::{io, ChainBatch, LayerPair, Model, NetworkSpec, ParameterInit, Parameters, SweepSchedule};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    /// Exponent on the constructive weight magnitude.
    pub eta: f64,
    /// L2 strength of a pair whose constructive magnitude is 1.
    pub base_strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenteringConfig {
    pub offset_update_rate: f64,
}

fn default_log_every() -> u64 {
    1000
}

fn default_exact_ll_cap() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub total_updates: u64,
    pub batch_size: usize,
    pub pos_chain_steps: usize,
    pub neg_chain_steps: usize,
    /// Persistent negative chains; defaults to `batch_size`.
    #[serde(default)]
    pub num_neg_chains: Option<usize>,
    #[serde(default)]
    pub reg: Option<RegularizationConfig>,
    #[serde(default)]
    pub centering: Option<CenteringConfig>,
    /// Heavy-ball coefficient; 0 is plain SGD.
    #[serde(default)]
    pub momentum: f64,
    /// Sweep order for both phases; the natural schedule when absent.
    #[serde(default)]
    pub schedule: Option<SweepSchedule>,
    /// Metrics interval in updates. 0 logs only the first and last record.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Checkpoint interval for [`Trainer::run`]; none when absent.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
    /// Exact log-likelihoods are logged when enumeration needs at most this many bits.
    #[serde(default = "default_exact_ll_cap")]
    pub exact_ll_cap: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(initial_lr: f64, total_updates: u64, batch_size: usize) -> Self {
        TrainConfig {
            initial_lr,
            total_updates,
            batch_size,
            pos_chain_steps: 1,
            neg_chain_steps: 1,
            num_neg_chains: None,
            reg: None,
            centering: None,
            momentum: 0.0,
            schedule: None,
            log_every: default_log_every(),
            checkpoint_every: None,
            exact_ll_cap: default_exact_ll_cap(),
            seed: 0,
        }
    }

    pub fn num_neg_chains(&self) -> usize {
        self.num_neg_chains.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad(format!("initial_lr must be positive, got {}", self.initial_lr));
        }
        for (name, n) in [
            ("batch_size", self.batch_size),
            ("pos_chain_steps", self.pos_chain_steps),
            ("neg_chain_steps", self.neg_chain_steps),
            ("num_neg_chains", self.num_neg_chains()),
        ] {
            if n == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if let Some(reg) = &self.reg {
            if !reg.eta.is_finite() || !(reg.base_strength.is_finite() && reg.base_strength > 0.0) {
                return bad(format!("invalid regularization {reg:?}"));
            }
        }
        if let Some(c) = &self.centering {
            let rho = c.offset_update_rate;
            if !(rho > 0.0 && rho <= 1.0) {
                return bad(format!("offset_update_rate must lie in (0,1], got {rho}"));
            }
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be at least 1".into());
        }
        Ok(())
    }

    /// Learning rate of update `t` (0-based): `initial_lr·(1 − t/T)`.
    pub fn lr(&self, t: u64) -> f64 {
        if self.total_updates == 0 {
            return 0.0;
        }
        let t = t.min(self.total_updates);
        self.initial_lr * ((self.total_updates - t) as f64 / self.total_updates as f64)
    }
}

/// Parameter-shaped ascent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: BTreeMap<LayerPair, Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradient {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let p = Parameters::zeros(spec);
        Gradient {
            weights: p.weights,
            biases: p.biases,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.values().flatten().chain(self.biases.iter().flatten())
    }

    /// `self += a·other`.
    pub fn add_scaled(&mut self, a: f64, other: &Gradient) {
        for (key, w) in self.weights.iter_mut() {
            w.scaled_add(a, &other.weights[key]);
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(a, o);
        }
    }

    /// The L2 term `−2λ^{k,l} W^{k,l}`; biases are not regularized.
    pub fn regularization(model: &Model, lambdas: &BTreeMap<LayerPair, f64>) -> Gradient {
        let mut g = Gradient::zeros(model.spec());
        for (key, w) in g.weights.iter_mut() {
            if let Some(&lambda) = lambdas.get(key) {
                w.scaled_add(-2.0 * lambda, &model.params().weights[key]);
            }
        }
        g
    }

    fn to_serial(&self) -> SerialGradient {
        SerialGradient {
            weights: self.weights.iter().map(|(&k, w)| (k, w.clone())).collect(),
            biases: self.biases.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SerialGradient {
    weights: Vec<(LayerPair, Array2<f64>)>,
    biases: Vec<Array1<f64>>,
}

impl From<SerialGradient> for Gradient {
    fn from(s: SerialGradient) -> Self {
        Gradient {
            weights: s.weights.into_iter().collect(),
            biases: s.biases,
        }
    }
}

/// Weighted centered moments: `Σ_s w_s (x^k − μ^k)(x^l − μ^l)ᵀ` per pair and
/// `Σ_s w_s x^k` per layer. Rows of `layers[k]` are states.
fn moments(spec: &NetworkSpec, layers: &[Array2<f64>], weights: &Array1<f64>, offsets: Option<&[Array1<f64>]>) -> Gradient {
    let centered: Vec<Array2<f64>> = layers
        .iter()
        .enumerate()
        .map(|(k, x)| match offsets {
            Some(m) => x - &m[k].view().insert_axis(Axis(0)),
            None => x.clone(),
        })
        .collect();
    let w = weights.view().insert_axis(Axis(1));
    let mut g = Gradient::zeros(spec);
    for (&(k, l), out) in g.weights.iter_mut() {
        *out = (&centered[k] * &w).t().dot(&centered[l]);
    }
    for (k, out) in g.biases.iter_mut().enumerate() {
        *out = layers[k].t().dot(weights);
    }
    g
}

fn uniform_weights(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

/// Positive minus negative moments plus the regularization term, all under
/// the model's current offsets.
pub fn sml_gradient(model: &Model, positive: &ChainBatch, negative: &ChainBatch, lambdas: &BTreeMap<LayerPair, f64>) -> Result<Gradient> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Config("gradient needs a non-empty minibatch and chain set".into()));
    }
    let offsets = model.params().offsets.as_deref();
    let spec = model.spec();
    let mut g = moments(spec, &positive.layers, &uniform_weights(positive.len()), offsets);
    g.add_scaled(-1.0, &moments(spec, &negative.layers, &uniform_weights(negative.len()), offsets));
    g.add_scaled(1.0, &Gradient::regularization(model, lambdas));
    Ok(g)
}

/// Largest unit count `exact_gradient` enumerates jointly.
pub const EXACT_GRADIENT_CAP: usize = 18;

/// Every joint state over the units not fixed, as per-layer matrices.
/// `visible` pins layer 0 when given.
fn enumerate_states(spec: &NetworkSpec, visible: Option<&[u8]>) -> Vec<Array2<f64>> {
    let first = if visible.is_some() { 1 } else { 0 };
    let free: usize = spec.layer_sizes()[first..].iter().sum();
    let count = 1usize << free;
    let mut layers: Vec<Array2<f64>> = spec.layer_sizes().iter().map(|&m| Array2::zeros((count, m))).collect();
    if let Some(v) = visible {
        for mut row in layers[0].rows_mut() {
            for (x, &b) in row.iter_mut().zip(v) {
                *x = b as f64;
            }
        }
    }
    for s in 0..count {
        let mut bit = free;
        for layer in layers[first..].iter_mut() {
            for x in layer.row_mut(s) {
                bit -= 1;
                *x = ((s >> bit) & 1) as f64;
            }
        }
    }
    layers
}

/// Normalized Boltzmann weights of the rows of `layers`.
fn boltzmann_weights(model: &Model, layers: &[Array2<f64>]) -> Array1<f64> {
    let rows = layers[0].nrows();
    let mut neg_energy = Array1::<f64>::zeros(rows);
    for (&(k, l), w) in &model.params().weights {
        neg_energy += &(layers[k].dot(w) * &layers[l]).sum_axis(Axis(1));
    }
    for (x, b) in layers.iter().zip(model.effective_biases()) {
        neg_energy += &x.dot(b);
    }
    let max = neg_energy.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut p = neg_energy.mapv(|x| (x - max).exp());
    let total = p.sum();
    p /= total;
    p
}

/// Gradient of the mean log-likelihood of `rows` with both expectations
/// computed by enumeration; regularization is not included.
pub fn exact_gradient(model: &Model, rows: &[Vec<u8>]) -> Result<Gradient> {
    let spec = model.spec();
    if rows.is_empty() {
        return Err(Error::Config("gradient needs at least one example".into()));
    }
    if spec.n_units() > EXACT_GRADIENT_CAP {
        return Err(Error::EnumerationCap {
            needed: spec.n_units(),
            cap: EXACT_GRADIENT_CAP,
        });
    }
    if let Some(row) = rows.iter().find(|r| r.len() != spec.n_vis() || r.iter().any(|&b| b > 1)) {
        return Err(Error::Shape(format!("example {row:?} is not a binary vector of length {}", spec.n_vis())));
    }
    let offsets = model.params().offsets.as_deref();
    let mut distinct: BTreeMap<&[u8], usize> = BTreeMap::new();
    for row in rows {
        *distinct.entry(row.as_slice()).or_default() += 1;
    }
    let mut g = Gradient::zeros(spec);
    for (v, count) in distinct {
        let states = enumerate_states(spec, Some(v));
        let w = boltzmann_weights(model, &states) * (count as f64 / rows.len() as f64);
        g.add_scaled(1.0, &moments(spec, &states, &w, offsets));
    }
    let states = enumerate_states(spec, None);
    let w = boltzmann_weights(model, &states);
    g.add_scaled(-1.0, &moments(spec, &states, &w, offsets));
    Ok(g)
}

/// Bits enumerated by the exact log-likelihood route (the larger of the
/// `log Z` and free-energy enumerations).
pub fn exact_ll_bits(spec: &NetworkSpec) -> usize {
    let units = |set: Vec<usize>| set.iter().map(|&k| spec.layer_size(k)).sum::<usize>();
    let all: Vec<usize> = (0..spec.num_layers()).collect();
    let z_bits = spec.n_units() - units(spec.largest_independent_set(&all));
    let f_bits = spec.n_hid() - units(spec.largest_independent_set(&all[1..]));
    z_bits.max(f_bits)
}

/// Mean exact log-likelihood of `rows`, or `None` when it needs more than `cap` bits.
pub fn exact_mean_log_likelihood(model: &Model, rows: &[Vec<u8>], cap: usize) -> Result<Option<f64>> {
    if rows.is_empty() || exact_ll_bits(model.spec()) > cap.min(crate::DEFAULT_CAP) {
        return Ok(None);
    }
    let log_z = exact_log_z_with(model, &LogZRoute::Auto, cap)?;
    Ok(Some(test_log_likelihood(model, rows, log_z, &LikelihoodMode::ExactF)?.mean))
}

/// Moves offsets to `new` and compensates the biases so that the effective
/// (uncentered) biases are unchanged.
fn shift_offsets(params: &mut Parameters, new: Vec<Array1<f64>>) {
    let old = params
        .offsets
        .take()
        .unwrap_or_else(|| new.iter().map(|m| Array1::zeros(m.len())).collect());
    for (&(k, l), w) in &params.weights {
        params.biases[k] += &w.dot(&(&new[l] - &old[l]));
        params.biases[l] += &w.t().dot(&(&new[k] - &old[k]));
    }
    params.offsets = Some(new);
}

/// Running-average offset update `μ ← (1−ρ)μ + ρ·mean`, with `means` taken
/// from the clamped positive chains (visible data and hidden samples).
pub fn update_offsets(model: &mut Model, positive: &ChainBatch, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("offset_update_rate must lie in (0,1], got {rho}")));
    }
    let means = positive.layer_means();
    let current: Vec<Array1<f64>> = match &model.params().offsets {
        Some(o) => o.clone(),
        None => means.iter().map(|m| Array1::zeros(m.len())).collect(),
    };
    let new: Vec<Array1<f64>> = current
        .iter()
        .zip(&means)
        .map(|(mu, m)| {
            if rho == 1.0 {
                m.clone()
            } else {
                (mu * (1.0 - rho) + m * rho).mapv(|x| x.clamp(0.0, 1.0))
            }
        })
        .collect();
    model.update_params(|p| shift_offsets(p, new));
    Ok(())
}

/// Training starting point: `N(0, 0.01²)` weights, zero hidden biases,
/// visible biases at the logit of the training means. With `centering`, the
/// offsets start at the visible data means and 0.5 for hidden units.
pub fn init_model(spec: NetworkSpec, dataset: &BinaryDataset, centering: bool, seed: u64) -> Result<Model> {
    if spec.n_vis() != dataset.n_vis {
        return Err(Error::Shape(format!(
            "model has {} visible units, dataset has {}",
            spec.n_vis(),
            dataset.n_vis
        )));
    }
    let (spec, mut params) = Model::build(spec, ParameterInit::Gaussian { sigma: 0.01, seed })?.into_parts();
    let means = Array1::from(dataset.means(crate::data::Split::Train));
    params.biases[0] = means.mapv(|m| {
        let m = m.clamp(1e-3, 1.0 - 1e-3);
        (m / (1.0 - m)).ln()
    });
    if centering {
        let mut offsets: Vec<Array1<f64>> = spec.layer_sizes().iter().map(|&n| Array1::from_elem(n, 0.5)).collect();
        offsets[0] = means;
        params.offsets = Some(offsets);
    }
    Model::from_parts(spec, params)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub update: u64,
    /// Rate the next update would use.
    pub lr: f64,
    /// Norm of the last applied ascent direction.
    pub grad_norm: Option<f64>,
    /// Mean squared error of `p(v | h)` against the last minibatch.
    pub recon_error: Option<f64>,
    pub train_ll: Option<f64>,
    pub test_ll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub update: u64,
    pub lr: f64,
    pub grad_norm: f64,
    pub recon_error: f64,
}

/// Paths written by [`Trainer::checkpoint`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Checkpoint {
    pub model: PathBuf,
    pub state: PathBuf,
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    update: u64,
    config: TrainConfig,
    dataset_sha256: String,
    rng: SplitRng,
    order: Vec<usize>,
    cursor: usize,
    pos_hidden: Vec<String>,
    neg_chains: ChainBatch,
    velocity: Option<SerialGradient>,
    last_step: Option<(f64, f64)>,
    metrics: Vec<MetricsRecord>,
}

fn train_digest(dataset: &BinaryDataset) -> String {
    let bits = pack_bits(dataset.train.iter().flatten().copied());
    crate::data::sha256_hex(&bits)
}

/// Mutable training state: model, both chain populations, minibatch order,
/// optimizer velocity and the metrics collected so far.
pub struct Trainer<'d> {
    model: Model,
    config: TrainConfig,
    dataset: &'d BinaryDataset,
    lambdas: BTreeMap<LayerPair, f64>,
    pos_order: Vec<usize>,
    neg_order: Vec<usize>,
    /// Packed hidden units of each training example's clamped chain.
    pos_hidden: Vec<Vec<u8>>,
    neg: ChainBatch,
    velocity: Option<Gradient>,
    rng: SplitRng,
    order: Vec<usize>,
    cursor: usize,
    update: u64,
    last_step: Option<(f64, f64)>,
    metrics: Vec<MetricsRecord>,
}

impl<'d> Trainer<'d> {
    pub fn new(model: Model, dataset: &'d BinaryDataset, config: TrainConfig) -> Result<Self> {
        let (lambdas, pos_order, neg_order) = Trainer::check(&model, dataset, &config)?;
        let spec = model.spec().clone();
        let mut rng = SplitRng::seed(config.seed);
        let mut init = rng.fork();
        let n_hid = spec.n_hid();
        let pos_hidden = (0..dataset.train.len())
            .map(|_| pack_bits((0..n_hid).map(|_| init.bernoulli(0.5) as u8)))
            .collect();
        let neg = ChainBatch::uniform(&spec, rng.split(config.num_neg_chains()));
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut rng);
        Ok(Trainer {
            model,
            config,
            dataset,
            lambdas,
            pos_order,
            neg_order,
            pos_hidden,
            neg,
            velocity: None,
            rng,
            order,
            cursor: 0,
            update: 0,
            last_step: None,
            metrics: Vec::new(),
        })
    }

    #[allow(clippy::type_complexity)]
    fn check(model: &Model, dataset: &BinaryDataset, config: &TrainConfig) -> Result<(BTreeMap<LayerPair, f64>, Vec<usize>, Vec<usize>)> {
        config.validate()?;
        dataset.validate()?;
        let spec = model.spec();
        if spec.n_vis() != dataset.n_vis {
            return Err(Error::Shape(format!(
                "model has {} visible units, dataset has {}",
                spec.n_vis(),
                dataset.n_vis
            )));
        }
        if spec.depth() == 0 {
            return Err(Error::Config("training needs at least one hidden layer".into()));
        }
        if config.batch_size > dataset.train.len() {
            return Err(Error::Config(format!(
                "batch size {} exceeds the {} training examples",
                config.batch_size,
                dataset.train.len()
            )));
        }
        let lambdas = match &config.reg {
            Some(r) => regularization_schedule(spec, r.eta, r.base_strength)?,
            None => BTreeMap::new(),
        };
        let schedule = config.schedule.clone().unwrap_or_else(|| SweepSchedule::natural(spec));
        Ok((lambdas, schedule.resolve(spec, true)?, schedule.resolve(spec, false)?))
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn update_count(&self) -> u64 {
        self.update
    }

    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn negative_chains(&self) -> &ChainBatch {
        &self.neg
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn is_finished(&self) -> bool {
        self.update >= self.config.total_updates
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let b = self.config.batch_size;
        if self.cursor + b > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + b].to_vec();
        self.cursor += b;
        batch
    }

    /// Runs both phases for the given training examples and returns the
    /// gradient with the advanced positive chains.
    fn phases(&mut self, batch: &[usize]) -> Result<(Gradient, ChainBatch)> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let spec = self.model.spec();
        let n_hid = spec.n_hid();
        let mut layers: Vec<Array2<f64>> = spec.layer_sizes().iter().map(|&m| Array2::zeros((batch.len(), m))).collect();
        for (r, &i) in batch.iter().enumerate() {
            for (x, &b) in layers[0].row_mut(r).iter_mut().zip(&self.dataset.train[i]) {
                *x = b as f64;
            }
            let hidden = unpack_bits(&self.pos_hidden[i], n_hid);
            let mut bits = hidden.iter();
            for layer in layers[1..].iter_mut() {
                for x in layer.row_mut(r) {
                    *x = *bits.next().expect("hidden width") as f64;
                }
            }
        }
        let mut pos = ChainBatch::from_parts(layers, self.rng.split(batch.len()));
        for _ in 0..self.config.pos_chain_steps {
            pos.sweep(&self.model, &self.pos_order);
        }
        for (r, &i) in batch.iter().enumerate() {
            self.pos_hidden[i] = pack_bits(pos.layers[1..].iter().flat_map(|x| x.row(r).to_vec()).map(|x| x as u8));
        }
        for _ in 0..self.config.neg_chain_steps {
            self.neg.sweep(&self.model, &self.neg_order);
        }
        let g = sml_gradient(&self.model, &pos, &self.neg, &self.lambdas)?;
        Ok((g, pos))
    }

    /// Gradient for the given training examples, advancing the positive
    /// chains of those examples and the negative chains.
    pub fn sml_gradient(&mut self, batch: &[usize]) -> Result<Gradient> {
        if let Some(&i) = batch.iter().find(|&&i| i >= self.dataset.train.len()) {
            return Err(Error::Config(format!("example index {i} out of range")));
        }
        Ok(self.phases(batch)?.0)
    }

    /// One parameter update.
    pub fn step(&mut self) -> Result<StepStats> {
        if self.is_finished() {
            return Err(Error::Config(format!("all {} updates have been applied", self.config.total_updates)));
        }
        if self.config.centering.is_some() && self.model.params().offsets.is_none() {
            let zeros = self.model.spec().layer_sizes().iter().map(|&n| Array1::zeros(n)).collect();
            let mut means: Vec<Array1<f64>> = self.model.spec().layer_sizes().iter().map(|&n| Array1::from_elem(n, 0.5)).collect();
            means[0] = Array1::from(self.dataset.means(crate::data::Split::Train));
            self.model.update_params(|p| {
                p.offsets = Some(zeros);
                shift_offsets(p, means);
            });
        }
        let t = self.update;
        let lr = self.config.lr(t);
        let batch = self.next_batch();
        let (grad, pos) = self.phases(&batch)?;
        let recon = pos.layer_probabilities(&self.model, 0);
        let recon_error = (&recon - &pos.layers[0]).mapv(|d| d * d).mean().unwrap_or(0.0);

        let delta = if self.config.momentum > 0.0 {
            let v = self.velocity.get_or_insert_with(|| Gradient::zeros(self.model.spec()));
            let mut next = Gradient::zeros(self.model.spec());
            next.add_scaled(self.config.momentum, v);
            next.add_scaled(lr, &grad);
            *v = next.clone();
            next
        } else {
            let mut d = Gradient::zeros(self.model.spec());
            d.add_scaled(lr, &grad);
            d
        };
        self.model.update_params(|p| {
            for (key, w) in p.weights.iter_mut() {
                *w += &delta.weights[key];
            }
            for (b, d) in p.biases.iter_mut().zip(&delta.biases) {
                *b += d;
            }
        });
        if let Some(c) = &self.config.centering {
            update_offsets(&mut self.model, &pos, c.offset_update_rate)?;
        }
        self.update += 1;
        let p = self.model.params();
        let finite = p.weights.values().flatten().chain(p.biases.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Diverged { update: self.update });
        }
        let grad_norm = grad.norm();
        self.last_step = Some((grad_norm, recon_error));
        Ok(StepStats {
            update: self.update,
            lr,
            grad_norm,
            recon_error,
        })
    }

    /// Builds a metrics record for the current state.
    pub fn record(&self) -> Result<MetricsRecord> {
        let cap = self.config.exact_ll_cap;
        Ok(MetricsRecord {
            update: self.update,
            lr: self.config.lr(self.update),
            grad_norm: self.last_step.map(|s| s.0),
            recon_error: self.last_step.map(|s| s.1),
            train_ll: exact_mean_log_likelihood(&self.model, &self.dataset.train, cap)?,
            test_ll: exact_mean_log_likelihood(&self.model, &self.dataset.test, cap)?,
        })
    }

    fn log(&mut self, sink: &mut Option<&mut dyn Write>) -> Result<()> {
        let rec = self.record()?;
        if let Some(w) = sink.as_mut() {
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        self.metrics.push(rec);
        Ok(())
    }

    fn due(&self, every: u64) -> bool {
        (every > 0 && self.update % every == 0) || self.is_finished()
    }

    /// Runs the remaining updates, appending JSON lines to `sink` and writing
    /// checkpoints under `checkpoint_dir` at the configured interval.
    pub fn run(&mut self, sink: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<()> {
        self.run_until(self.config.total_updates, sink, checkpoint_dir)
    }

    /// Like [`Trainer::run`] but stops once `stop` updates have been applied.
    pub fn run_until(&mut self, stop: u64, mut sink: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<()> {
        if self.metrics.is_empty() {
            self.log(&mut sink)?;
        }
        while !self.is_finished() && self.update < stop {
            self.step()?;
            if self.due(self.config.log_every) {
                self.log(&mut sink)?;
            }
            if let (Some(dir), Some(every)) = (checkpoint_dir, self.config.checkpoint_every) {
                if self.due(every) {
                    self.checkpoint(dir)?;
                }
            }
        }
        Ok(())
    }

    /// Writes `checkpoint-<update>.model.json` (bit-exact encoding) and the
    /// matching `.state.json` sidecar into `dir`.
    pub fn checkpoint(&self, dir: &Path) -> Result<Checkpoint> {
        fs::create_dir_all(dir)?;
        let stem = format!("checkpoint-{:08}", self.update);
        let model = dir.join(format!("{stem}.model.json"));
        let state = dir.join(format!("{stem}.state.json"));
        io::save(&self.model, &model, io::RealEncoding::Binary)?;
        let sidecar = Sidecar {
            format_version: CHECKPOINT_FORMAT_VERSION,
            update: self.update,
            config: self.config.clone(),
            dataset_sha256: train_digest(self.dataset),
            rng: self.rng.clone(),
            order: self.order.clone(),
            cursor: self.cursor,
            pos_hidden: self.pos_hidden.iter().map(|b| BASE64.encode(b)).collect(),
            neg_chains: self.neg.clone(),
            velocity: self.velocity.as_ref().map(Gradient::to_serial),
            last_step: self.last_step,
            metrics: self.metrics.clone(),
        };
        fs::write(&state, serde_json::to_string(&sidecar)?)?;
        Ok(Checkpoint { model, state })
    }

    /// Restores a trainer exactly as it was when `checkpoint` was written.
    pub fn resume(dataset: &'d BinaryDataset, checkpoint: &Checkpoint) -> Result<Self> {
        let model = io::load(&checkpoint.model)?;
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(&checkpoint.state)?)?;
        if s.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {}", s.format_version)));
        }
        if s.dataset_sha256 != train_digest(dataset) {
            return Err(Error::format("checkpoint", "training split differs from the one the run started with"));
        }
        let (lambdas, pos_order, neg_order) = Trainer::check(&model, dataset, &s.config)?;
        let n_hid = model.spec().n_hid();
        let bytes = n_hid.div_ceil(8);
        let pos_hidden = s
            .pos_hidden
            .iter()
            .map(|b| {
                let raw = BASE64.decode(b).map_err(|e| Error::format("checkpoint", format!("bad base64: {e}")))?;
                if raw.len() != bytes {
                    return Err(Error::format("checkpoint", "positive chain state has the wrong width"));
                }
                Ok(raw)
            })
            .collect::<Result<Vec<_>>>()?;
        let widths_ok = s.neg_chains.layers.iter().zip(model.spec().layer_sizes()).all(|(x, &m)| x.ncols() == m)
            && s.neg_chains.layers.len() == model.spec().num_layers();
        if pos_hidden.len() != dataset.train.len()
            || s.order.len() != dataset.train.len()
            || s.cursor > s.order.len()
            || !widths_ok
        {
            return Err(Error::format("checkpoint", "chain or order state does not match the model and dataset"));
        }
        Ok(Trainer {
            model,
            config: s.config,
            dataset,
            lambdas,
            pos_order,
            neg_order,
            pos_hidden,
            neg: s.neg_chains,
            velocity: s.velocity.map(Gradient::from),
            rng: s.rng,
            order: s.order,
            cursor: s.cursor,
            update: s.update,
            last_step: s.last_step,
            metrics: s.metrics,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
}

/// Runs `config.total_updates` updates from `model`.
pub fn train(model: Model, dataset: &BinaryDataset, config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, dataset, config)?;
    trainer.run(None, None)?;
    let metrics = trainer.metrics.clone();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        metrics,
    })
}

/// Sampling intervals; `log10_*` fields are exponents of ten, `eta` is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperparamRanges {
    pub log10_lr: (f64, f64),
    pub log10_l2: (f64, f64),
    pub eta: (f64, f64),
    pub log10_offset_rate: (f64, f64),
}

impl HyperparamRanges {
    pub fn mnist() -> Self {
        HyperparamRanges {
            log10_lr: (-4.0, -2.0),
            log10_l2: (-7.0, -4.0),
            eta: (0.5, 3.5),
            log10_offset_rate: (-8.0, -5.0),
        }
    }

    pub fn silhouettes() -> Self {
        HyperparamRanges {
            log10_lr: (-4.5, -2.5),
            ..HyperparamRanges::mnist()
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("log10_lr", self.log10_lr),
            ("log10_l2", self.log10_l2),
            ("eta", self.eta),
            ("log10_offset_rate", self.log10_offset_rate),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Config(format!("{name} interval [{lo}, {hi}] is inverted or non-finite")));
            }
        }
        if self.log10_offset_rate.1 > 0.0 {
            return Err(Error::Config("offset rates above 1 are not allowed".into()));
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut SplitRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + rng.uniform() * (hi - lo)
    }
}

/// `10^x`, exact for integral exponents.
fn pow10(x: f64) -> f64 {
    if x.fract() == 0.0 && x.abs() <= 300.0 {
        10f64.powi(x as i32)
    } else {
        10f64.powf(x)
    }
}

/// Draws learning rate, L2 strength, `η` and offset rate into a copy of
/// `base`; enables regularization and centering. The draw seed also becomes
/// the training seed.
pub fn sample_hyperparams(ranges: &HyperparamRanges, base: &TrainConfig, seed: u64) -> Result<TrainConfig> {
    ranges.validate()?;
    let mut rng = SplitRng::seed(seed);
    let mut config = base.clone();
    config.initial_lr = pow10(uniform_in(&mut rng, ranges.log10_lr));
    let base_strength = pow10(uniform_in(&mut rng, ranges.log10_l2));
    let eta = uniform_in(&mut rng, ranges.eta);
    config.reg = Some(RegularizationConfig { eta, base_strength });
    config.centering = Some(CenteringConfig {
        offset_update_rate: pow10(uniform_in(&mut rng, ranges.log10_offset_rate)),
    });
    config.seed = seed;
    config.validate()?;
    Ok(config)
}

/// Configurations per experiment setting in the sweep.
pub const DEFAULT_SWEEP_SIZE: usize = 16;

/// `count` configurations, the `i`-th drawn with seed `seed + i`.
pub fn hyperparam_sweep(ranges: &HyperparamRanges, base: &TrainConfig, count: usize, seed: u64) -> Result<Vec<TrainConfig>> {
    (0..count as u64)
        .map(|i| sample_hyperparams(ranges, base, seed.wrapping_add(i)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Mnist,
    Silhouettes,
    ToyBas,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Preset::Mnist),
            "silhouettes" => Ok(Preset::Silhouettes),
            "toy-bas" => Ok(Preset::ToyBas),
            other => Err(Error::Config(format!("unknown preset {other:?} (mnist, silhouettes, toy-bas)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetSetup {
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    /// Sweep ranges for the full-scale presets.
    pub ranges: Option<HyperparamRanges>,
    /// Built-in dataset, when the preset has one.
    pub toy: Option<ToyKind>,
}

/// Hidden units per layer in the image presets.
pub const IMAGE_HIDDEN_WIDTH: usize = 500;

/// Network and base configuration for a preset. `depth` is the number of
/// hidden layers of the image presets and is ignored by `toy-bas`.
pub fn preset(which: Preset, depth: usize) -> Result<PresetSetup> {
    let image = |ranges: HyperparamRanges, pos_steps: usize| -> Result<PresetSetup> {
        if depth == 0 {
            return Err(Error::Config("image presets need at least one hidden layer".into()));
        }
        let mut sizes = vec![784];
        sizes.extend(std::iter::repeat_n(IMAGE_HIDDEN_WIDTH, depth));
        let mid = |(lo, hi): (f64, f64)| pow10((lo + hi) / 2.0);
        let mut config = TrainConfig::new(mid(ranges.log10_lr), 1_000_000, 100);
        config.pos_chain_steps = pos_steps;
        config.neg_chain_steps = 5;
        config.reg = Some(RegularizationConfig {
            eta: (ranges.eta.0 + ranges.eta.1) / 2.0,
            base_strength: mid(ranges.log10_l2),
        });
        config.centering = Some(CenteringConfig {
            offset_update_rate: mid(ranges.log10_offset_rate),
        });
        config.log_every = 10_000;
        config.checkpoint_every = Some(100_000);
        Ok(PresetSetup {
            spec: NetworkSpec::sdbm(&sizes)?,
            config,
            ranges: Some(ranges),
            toy: None,
        })
    };
    match which {
        Preset::Mnist => image(HyperparamRanges::mnist(), 5),
        Preset::Silhouettes => image(HyperparamRanges::silhouettes(), 1),
        Preset::ToyBas => {
            let mut config = TrainConfig::new(0.02, 20_000, 14);
            config.pos_chain_steps = 1;
            config.neg_chain_steps = 1;
            config.num_neg_chains = Some(100);
            config.reg = Some(RegularizationConfig {
                eta: 1.0,
                base_strength: 1e-4,
            });
            config.centering = Some(CenteringConfig { offset_update_rate: 0.01 });
            config.log_every = 2_000;
            Ok(PresetSetup {
                spec: NetworkSpec::sdbm(&[9, 6, 6])?,
                config,
                ranges: None,
                toy: Some(ToyKind::BarsAndStripes { width: 3, height: 3 }),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy_dataset, Provenance};
    use crate::evaluation::exact_log_z;
    use crate::free_energy::exact_free_energy;
    use ndarray::array;

    fn dataset(n_vis: usize, rows: Vec<Vec<u8>>) -> BinaryDataset {
        BinaryDataset::new(n_vis, rows.clone(), rows, Provenance {
            source: "test".into(),
            binarization_seed: None,
            source_sha256: Vec::new(),
        })
        .unwrap()
    }

    fn mean_ll(model: &Model, rows: &[Vec<u8>]) -> f64 {
        let log_z = exact_log_z(model).unwrap();
        rows.iter()
            .map(|r| {
                let v: Vec<f64> = r.iter().map(|&b| b as f64).collect();
                -exact_free_energy(model, &v).unwrap() - log_z
            })
            .sum::<f64>()
            / rows.len() as f64
    }

    fn random_model(spec: NetworkSpec, seed: u64, centered: bool) -> Model {
        let mut rng = SplitRng::seed(seed);
        let (spec, mut params) = Model::build(spec, ParameterInit::Gaussian { sigma: 0.7, seed }).unwrap().into_parts();
        for b in params.biases.iter_mut() {
            b.mapv_inplace(|_| 0.5 * rng.normal());
        }
        if centered {
            params.offsets = Some(params.biases.iter().map(|b| b.mapv(|_| rng.uniform())).collect());
        }
        Model::from_parts(spec, params).unwrap()
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let spec = NetworkSpec::sdbm(&[3, 2, 2]).unwrap();
        let model = random_model(spec, 5, true);
        let rows = vec![vec![1, 0, 1], vec![0, 0, 1], vec![1, 1, 1], vec![1, 0, 1]];
        let g = exact_gradient(&model, &rows).unwrap();
        let h = 1e-5;
        let perturbed = |f: &dyn Fn(&mut Parameters)| {
            let (spec, mut p) = model.clone().into_parts();
            f(&mut p);
            mean_ll(&Model::from_parts(spec, p).unwrap(), &rows)
        };
        for (&key, w) in &g.weights {
            for ((i, j), &gv) in w.indexed_iter() {
                let up = perturbed(&|p| p.weights.get_mut(&key).unwrap()[[i, j]] += h);
                let down = perturbed(&|p| p.weights.get_mut(&key).unwrap()[[i, j]] -= h);
                assert!((gv - (up - down) / (2.0 * h)).abs() < 1e-9, "{key:?} {i} {j}");
            }
        }
        for (k, b) in g.biases.iter().enumerate() {
            for (i, &gv) in b.iter().enumerate() {
                let up = perturbed(&|p| p.biases[k][i] += h);
                let down = perturbed(&|p| p.biases[k][i] -= h);
                assert!((gv - (up - down) / (2.0 * h)).abs() < 1e-9, "bias {k} {i}");
            }
        }
    }

    #[test]
    fn single_unit_bias_gradient_is_one_minus_sigmoid() {
        let spec = NetworkSpec::rbm(1, 1).unwrap();
        let rows = vec![vec![1u8]; 4];
        for b0 in [-2.0, 0.0, 3.0, 8.0] {
            let mut params = Parameters::zeros(&spec);
            params.biases[0] = array![b0];
            let model = Model::from_parts(spec.clone(), params).unwrap();
            let g = exact_gradient(&model, &rows).unwrap();
            let want = 1.0 - crate::model::sigmoid(b0);
            assert!(g.biases[0][0] > 0.0);
            assert!((g.biases[0][0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_gradient_averages_to_zero() {
        let spec = NetworkSpec::rbm(3, 2).unwrap();
        let model = Model::build(spec.clone(), ParameterInit::Zeros).unwrap();
        let mut rng = SplitRng::seed(17);
        let reps = 1000;
        let rows: Vec<Vec<u8>> = (0..reps * 20).map(|_| (0..3).map(|_| rng.bernoulli(0.5) as u8).collect()).collect();
        let ds = dataset(3, rows);
        let mut config = TrainConfig::new(0.1, 1, 20);
        config.seed = 3;
        let mut trainer = Trainer::new(model, &ds, config).unwrap();
        let mut sum = Gradient::zeros(&spec);
        let mut sq = Gradient::zeros(&spec);
        for r in 0..reps {
            let batch: Vec<usize> = (r * 20..r * 20 + 20).collect();
            let g = trainer.sml_gradient(&batch).unwrap();
            sum.add_scaled(1.0, &g);
            let mut g2 = g.clone();
            for w in g2.weights.values_mut() {
                w.mapv_inplace(|x| x * x);
            }
            for b in g2.biases.iter_mut() {
                b.mapv_inplace(|x| x * x);
            }
            sq.add_scaled(1.0, &g2);
        }
        let n = reps as f64;
        let check = |s: f64, q: f64| {
            let mean = s / n;
            let sd = ((q / n - mean * mean).max(0.0) / n).sqrt();
            assert!(mean.abs() <= 3.0 * sd + 1e-12, "mean {mean} sd {sd}");
        };
        for (key, w) in &sum.weights {
            for (s, q) in w.iter().zip(&sq.weights[key]) {
                check(*s, *q);
            }
        }
        for (b, q) in sum.biases.iter().zip(&sq.biases) {
            for (s, q) in b.iter().zip(q) {
                check(*s, *q);
            }
        }
    }

    #[test]
    fn offsets_with_unit_rate_equal_batch_means_and_keep_distribution() {
        let spec = NetworkSpec::dbm(&[3, 2, 2]).unwrap();
        let mut model = random_model(spec.clone(), 9, true);
        let before = model.clone();
        let layers = vec![
            array![[1.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
            array![[0.0, 1.0], [1.0, 1.0]],
            array![[0.0, 0.0], [1.0, 0.0]],
        ];
        let batch = ChainBatch::from_parts(layers, SplitRng::seed(0).split(2));
        update_offsets(&mut model, &batch, 1.0).unwrap();
        let offsets = model.params().offsets.clone().unwrap();
        assert_eq!(offsets[0], array![1.0, 0.5, 0.5]);
        assert_eq!(offsets[1], array![0.5, 1.0]);
        assert_eq!(offsets[2], array![0.5, 0.0]);
        for (a, b) in model.effective_biases().iter().zip(before.effective_biases()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let dz = exact_log_z(&model).unwrap() + model.energy_shift() - exact_log_z(&before).unwrap() - before.energy_shift();
        assert!(dz.abs() < 1e-10);
        assert!(update_offsets(&mut model, &batch, 0.0).is_err());
    }

    #[test]
    fn zero_updates_return_the_input() {
        let ds = toy_dataset(&ToyKind::BarsAndStripes { width: 2, height: 2 }, 0).unwrap();
        let model = random_model(NetworkSpec::sdbm(&[4, 2, 2]).unwrap(), 1, false);
        let mut config = TrainConfig::new(0.1, 0, 2);
        config.centering = Some(CenteringConfig { offset_update_rate: 0.1 });
        let out = train(model.clone(), &ds, config).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let ds = toy_dataset(&ToyKind::BarsAndStripes { width: 2, height: 2 }, 0).unwrap();
        let spec = NetworkSpec::sdbm(&[4, 3, 2]).unwrap();
        let mut config = TrainConfig::new(0.05, 200, 3);
        config.centering = Some(CenteringConfig { offset_update_rate: 0.05 });
        config.reg = Some(RegularizationConfig { eta: 1.0, base_strength: 1e-3 });
        config.momentum = 0.5;
        config.log_every = 50;
        config.seed = 12;
        let run = || train(init_model(spec.clone(), &ds, true, 4).unwrap(), &ds, config.clone()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 5);
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let ds = toy_dataset(&ToyKind::BarsAndStripes { width: 2, height: 2 }, 0).unwrap();
        let spec = NetworkSpec::sdbm(&[4, 3, 2]).unwrap();
        let mut config = TrainConfig::new(0.05, 60, 4);
        config.centering = Some(CenteringConfig { offset_update_rate: 0.1 });
        config.momentum = 0.3;
        config.log_every = 20;
        let model = init_model(spec, &ds, true, 2).unwrap();
        let straight = train(model.clone(), &ds, config.clone()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(model, &ds, config).unwrap();
        t.run_until(25, None, None).unwrap();
        assert_eq!(t.update_count(), 25);
        let cp = t.checkpoint(dir.path()).unwrap();
        drop(t);
        let mut resumed = Trainer::resume(&ds, &cp).unwrap();
        resumed.run(None, None).unwrap();
        assert_eq!(resumed.metrics(), straight.metrics.as_slice());
        assert_eq!(resumed.into_model(), straight.model);
    }

    #[test]
    fn regularizer_alone_decays_weights_geometrically() {
        let spec = NetworkSpec::sdbm(&[2, 2, 2]).unwrap();
        let mut model = random_model(spec.clone(), 3, false);
        let lambdas = regularization_schedule(&spec, 1.5, 0.2).unwrap();
        let start = model.params().weights.clone();
        let lr = 0.1;
        for _ in 0..10 {
            let g = Gradient::regularization(&model, &lambdas);
            model.update_params(|p| {
                for (key, w) in p.weights.iter_mut() {
                    w.scaled_add(lr, &g.weights[key]);
                }
            });
        }
        for (key, w) in &model.params().weights {
            let factor = (1.0 - 2.0 * lr * lambdas[key]).powi(10);
            for (a, b) in w.iter().zip(&start[key]) {
                assert!((a - b * factor).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lr_schedule_is_linear() {
        let config = TrainConfig::new(0.3, 1000, 1);
        assert_eq!(config.lr(0), 0.3);
        assert_eq!(config.lr(1000), 0.0);
        for t in [1u64, 250, 500, 999] {
            assert!((config.lr(t) - 0.3 * (1.0 - t as f64 / 1000.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::new(0.1, 10, 2);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.centering = Some(CenteringConfig { offset_update_rate: 0.0 });
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.initial_lr = -1.0;
        assert!(c.validate().is_err());
        let ds = toy_dataset(&ToyKind::Parity { n: 2 }, 0).unwrap();
        let model = Model::build(NetworkSpec::rbm(2, 2).unwrap(), ParameterInit::Zeros).unwrap();
        assert!(Trainer::new(model, &ds, TrainConfig::new(0.1, 1, 3)).is_err());
    }

    #[test]
    fn hyperparams_follow_ranges() {
        let base = TrainConfig::new(1.0, 10, 1);
        for seed in 0..200 {
            let c = sample_hyperparams(&HyperparamRanges::mnist(), &base, seed).unwrap();
            assert!((1e-4..=1e-2).contains(&c.initial_lr));
            let reg = c.reg.unwrap();
            assert!((1e-7..=1e-4).contains(&reg.base_strength));
            assert!((0.5..=3.5).contains(&reg.eta));
            assert!((1e-8..=1e-5).contains(&c.centering.unwrap().offset_update_rate));
        }
        let fixed = HyperparamRanges {
            log10_lr: (-3.0, -3.0),
            ..HyperparamRanges::mnist()
        };
        assert_eq!(sample_hyperparams(&fixed, &base, 5).unwrap().initial_lr, 1e-3);
        let inverted = HyperparamRanges {
            eta: (2.0, 1.0),
            ..HyperparamRanges::mnist()
        };
        assert!(sample_hyperparams(&inverted, &base, 0).is_err());
        let sweep = hyperparam_sweep(&HyperparamRanges::silhouettes(), &base, DEFAULT_SWEEP_SIZE, 7).unwrap();
        assert_eq!(sweep.len(), 16);
        assert!(sweep.iter().all(|c| (10f64.powf(-4.5)..=10f64.powf(-2.5)).contains(&c.initial_lr)));
    }

    #[test]
    fn eta_is_sampled_linearly() {
        let base = TrainConfig::new(1.0, 10, 1);
        let n = 4000;
        let below_two = (0..n)
            .filter(|&s| sample_hyperparams(&HyperparamRanges::mnist(), &base, s).unwrap().reg.unwrap().eta < 2.0)
            .count();
        // Half the mass of U[0.5, 3.5] lies below 2.
        let sd = (0.25 / n as f64).sqrt();
        assert!((below_two as f64 / n as f64 - 0.5).abs() < 4.0 * sd);
    }

    #[test]
    fn presets_match_protocol() {
        let m = preset(Preset::Mnist, 4).unwrap();
        assert_eq!(m.spec.layer_sizes(), &[784, 500, 500, 500, 500]);
        assert_eq!((m.config.batch_size, m.config.pos_chain_steps, m.config.neg_chain_steps), (100, 5, 5));
        assert_eq!(m.config.total_updates, 1_000_000);
        let s = preset(Preset::Silhouettes, 2).unwrap();
        assert_eq!(s.config.pos_chain_steps, 1);
        assert_eq!("toy-bas".parse::<Preset>().unwrap(), Preset::ToyBas);
        assert!(preset(Preset::Mnist, 0).is_err());
    }
}
