//! Partition functions and test log-likelihoods.
//!
//! Exact `log Z` sums out the largest set of mutually unconnected layers in
//! closed form and enumerates everything else. AIS anneals from a
//! zero-weight base along `E_β = (1−β)E_A + βE`, one Gibbs sweep per
//! intermediate distribution.

use rayon::prelude::*;
use serde::Serialize;

use crate::enumerate::DEFAULT_CAP;
use crate::error::{Error, Result};
use crate::free_energy::{FreeEnergy, HiddenSystem, MeanFieldConfig};
use crate::model::gibbs::LayerSampler;
use crate::model::{softplus, ChainBatch, Model, SweepSchedule};
use crate::rng::SplitRng;

/// Which units `exact_log_z` marginalizes analytically.
#[derive(Clone, Debug, PartialEq)]
pub enum LogZRoute {
    /// The largest independent set of layers.
    Auto,
    /// Plain enumeration of every unit.
    Full,
    /// The given layers, which must be mutually unconnected.
    Layers(Vec<usize>),
}

pub fn exact_log_z(model: &Model) -> Result<f64> {
    exact_log_z_with(model, &LogZRoute::Auto, DEFAULT_CAP)
}

/// `log Σ_X exp(−E(X))`; the enumerated unit count must not exceed `cap`.
pub fn exact_log_z_with(model: &Model, route: &LogZRoute, cap: usize) -> Result<f64> {
    let spec = model.spec();
    let layers = match route {
        LogZRoute::Auto => spec.largest_independent_set(&(0..spec.num_layers()).collect::<Vec<_>>()),
        LogZRoute::Full => Vec::new(),
        LogZRoute::Layers(layers) => {
            if layers.iter().any(|&k| k >= spec.num_layers()) || !spec.is_independent_set(layers) {
                return Err(Error::Config(format!("layers {layers:?} are not an independent set")));
            }
            layers.clone()
        }
    };
    let units: Vec<usize> = layers
        .iter()
        .flat_map(|&k| spec.layer_start(k)..spec.layer_start(k) + spec.layer_size(k))
        .collect();
    let mut sorted = units;
    sorted.sort_unstable();
    let sys = HiddenSystem::joint(model);
    Ok(sys.marginal_problem(&[], &sorted).enumerate(cap)?.log_sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnnealingSchedule {
    pub betas: Vec<f64>,
    pub num_runs: usize,
}

impl AnnealingSchedule {
    /// `num_betas` evenly spaced inverse temperatures from 0 to 1 inclusive.
    pub fn uniform(num_betas: usize, num_runs: usize) -> Result<Self> {
        if num_betas < 2 {
            return Err(Error::Config("annealing needs at least two betas".into()));
        }
        let last = (num_betas - 1) as f64;
        let betas = (0..num_betas).map(|i| i as f64 / last).collect();
        let s = AnnealingSchedule { betas, num_runs };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.betas;
        if self.num_runs == 0 {
            return Err(Error::Config("annealing needs at least one run".into()));
        }
        if b.len() < 2 || b[0] != 0.0 || *b.last().unwrap() != 1.0 {
            return Err(Error::Config("betas must run from 0 to 1".into()));
        }
        if b.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("betas must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Base distribution of the annealing path.
#[derive(Clone, Debug, PartialEq)]
pub enum AisBase {
    /// Uniform over all units.
    Uniform,
    /// Independent visible units with these means; hidden units uniform.
    VisibleMeans(Vec<f64>),
}

impl AisBase {
    /// Means smoothed away from 0 and 1 by add-½ counting over `n` examples.
    pub fn fit(means: &[f64], n: usize) -> Self {
        let n = n as f64;
        AisBase::VisibleMeans(means.iter().map(|m| (m * n + 0.5) / (n + 1.0)).collect())
    }

    fn visible_biases(&self, n_vis: usize) -> Result<Vec<f64>> {
        match self {
            AisBase::Uniform => Ok(vec![0.0; n_vis]),
            AisBase::VisibleMeans(m) => {
                if m.len() != n_vis || m.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
                    return Err(Error::Config("base means must lie strictly inside (0,1), one per visible unit".into()));
                }
                Ok(m.iter().map(|&p| (p / (1.0 - p)).ln()).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AisResult {
    pub log_z_estimate: f64,
    pub log_weights: Vec<f64>,
    pub ci3: (f64, f64),
    pub log_z_base: f64,
    pub num_runs: usize,
    pub num_betas: usize,
    /// Standard error of the estimate, in nats.
    pub std_error: f64,
}

pub fn ais_log_z(model: &Model, schedule: &AnnealingSchedule, seed: u64) -> Result<AisResult> {
    ais_log_z_with_base(model, schedule, &AisBase::Uniform, seed)
}

pub fn ais_log_z_with_base(model: &Model, schedule: &AnnealingSchedule, base: &AisBase, seed: u64) -> Result<AisResult> {
    schedule.validate()?;
    let spec = model.spec();
    let base_vis = base.visible_biases(spec.n_vis())?;
    let log_z_base = base_vis.iter().map(|&b| softplus(b)).sum::<f64>() + spec.n_hid() as f64 * std::f64::consts::LN_2;
    let order = SweepSchedule::natural(spec).resolve(spec, false)?;
    let log_weights: Vec<f64> = (0..schedule.num_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = SplitRng::stream(seed, run as u64);
            let w = ais_run(model, &schedule.betas, &base_vis, &order, &mut rng);
            if w.is_finite() {
                Ok(w)
            } else {
                Err(Error::NonFinite(format!("AIS run {run} produced log weight {w}")))
            }
        })
        .collect::<Result<_>>()?;
    let (mean_log, std_error) = log_mean_exp_with_se(&log_weights);
    let estimate = mean_log + log_z_base;
    Ok(AisResult {
        log_z_estimate: estimate,
        ci3: (estimate - 3.0 * std_error, estimate + 3.0 * std_error),
        log_weights,
        log_z_base,
        num_runs: schedule.num_runs,
        num_betas: schedule.betas.len(),
        std_error,
    })
}

/// `(log mean exp(x), se)` where `se` is the standard error of the mean
/// weight divided by the mean weight.
fn log_mean_exp_with_se(x: &[f64]) -> (f64, f64) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let se = if w.len() > 1 {
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt() / mean
    } else {
        0.0
    };
    (m + mean.ln(), se)
}

fn ais_run(model: &Model, betas: &[f64], base_vis: &[f64], order: &[usize], rng: &mut SplitRng) -> f64 {
    let spec = model.spec();
    let eff = model.effective_biases();
    let mut layers: Vec<Vec<f64>> = (0..spec.num_layers())
        .map(|k| {
            (0..spec.layer_size(k))
                .map(|i| {
                    let p = if k == 0 { crate::model::sigmoid(base_vis[i]) } else { 0.5 };
                    rng.bernoulli(p) as u8 as f64
                })
                .collect()
        })
        .collect();
    let mut sampler = LayerSampler::new(model);
    let mut bias: Vec<Vec<f64>> = eff.iter().map(|b| vec![0.0; b.len()]).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut log_w = 0.0;
    for t in 1..betas.len() {
        let (prev, beta) = (betas[t - 1], betas[t]);
        let mut e_model = sampler.interaction_energy(&layers) + model.energy_shift();
        for (b, x) in eff.iter().zip(&layers) {
            e_model -= dot(b.as_slice().unwrap(), x);
        }
        let e_base = -dot(base_vis, &layers[0]);
        log_w += (beta - prev) * (e_base - e_model);
        if t + 1 == betas.len() {
            break;
        }
        for (k, bk) in bias.iter_mut().enumerate() {
            let b = eff[k].as_slice().unwrap();
            for (i, out) in bk.iter_mut().enumerate() {
                let a = if k == 0 { base_vis[i] } else { 0.0 };
                *out = (1.0 - beta) * a + beta * b[i];
            }
        }
        for &k in order {
            sampler.sample(k, &mut layers, beta, &bias[k], rng);
        }
    }
    log_w
}

#[derive(Clone, Debug, PartialEq)]
pub enum LikelihoodMode {
    /// `−F(v) − log Z` with exact `F`.
    ExactF,
    /// `−F_MF(v) − log Z`, a lower bound on the exact value.
    MeanfieldBound(MeanFieldConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodReport {
    pub per_example: Vec<f64>,
    pub mean: f64,
    pub ci3: (f64, f64),
}

pub fn test_log_likelihood(model: &Model, rows: &[Vec<u8>], log_z: f64, mode: &LikelihoodMode) -> Result<LikelihoodReport> {
    if rows.is_empty() {
        return Err(Error::Config("log-likelihood needs at least one example".into()));
    }
    let fe = FreeEnergy::new(model);
    let per_example: Vec<f64> = rows
        .par_iter()
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|&b| b as f64).collect();
            let f = match mode {
                LikelihoodMode::ExactF => fe.exact(&v)?,
                LikelihoodMode::MeanfieldBound(cfg) => fe.meanfield(&v, &MeanFieldConfig { refine_from_hardmin: false, ..cfg.clone() })?.free_energy,
            };
            Ok(-f - log_z)
        })
        .collect::<Result<_>>()?;
    let n = per_example.len() as f64;
    let mean = per_example.iter().sum::<f64>() / n;
    let sd = if per_example.len() > 1 {
        (per_example.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let half = 3.0 * sd / n.sqrt();
    Ok(LikelihoodReport {
        per_example,
        mean,
        ci3: (mean - half, mean + half),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleSummary {
    pub num_betas: usize,
    pub num_runs: usize,
    pub spacing: &'static str,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogZReport {
    pub estimate: f64,
    pub ci3: (f64, f64),
    pub method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodSummary {
    pub mode: &'static str,
    pub train_mean: f64,
    pub test_mean: f64,
    pub train_ci3: (f64, f64),
    pub test_ci3: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub log_z: LogZReport,
    pub ll: LikelihoodSummary,
    /// AIS estimate minus exact `log Z`, when both were computed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_delta: Option<f64>,
}

/// Visible samples from independent chains.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleSet {
    /// Final binary visible states.
    pub states: Vec<Vec<u8>>,
    /// `p(v_i = 1 | rest)` at the final state of each chain.
    pub probabilities: Vec<Vec<f64>>,
}

/// Runs `count` chains from uniform random states for `chain_steps` sweeps.
pub fn draw_samples(model: &Model, count: usize, chain_steps: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let spec = model.spec();
    let order = SweepSchedule::natural(spec).resolve(spec, false)?;
    let mut chains = ChainBatch::uniform(spec, SplitRng::seed(seed).split(count));
    for _ in 0..chain_steps {
        chains.sweep(model, &order);
    }
    let probs = chains.layer_probabilities(model, 0);
    Ok(SampleSet {
        states: (0..count).map(|r| chains.state(r).visible().to_vec()).collect(),
        probabilities: probs.rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    /// Pixelwise Euclidean distance.
    pub distance: f64,
}

/// Nearest row of `rows` to each query under pixelwise L2 distance; ties go
/// to the lower index.
pub fn nearest_neighbors(queries: &[Vec<f64>], rows: &[Vec<u8>]) -> Result<Vec<Neighbor>> {
    if rows.is_empty() {
        return Err(Error::Config("nearest-neighbor search needs at least one reference row".into()));
    }
    queries
        .par_iter()
        .map(|q| {
            let mut best = Neighbor {
                index: 0,
                distance: f64::INFINITY,
            };
            for (i, row) in rows.iter().enumerate() {
                if row.len() != q.len() {
                    return Err(Error::Shape(format!("reference row {i} has length {}, expected {}", row.len(), q.len())));
                }
                let d: f64 = q.iter().zip(row).map(|(a, &b)| (a - b as f64).powi(2)).sum();
                if d < best.distance {
                    best = Neighbor { index: i, distance: d };
                }
            }
            best.distance = best.distance.sqrt();
            Ok(best)
        })
        .collect()
}
