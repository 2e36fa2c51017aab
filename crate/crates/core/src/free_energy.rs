//! Exact, hard-min and mean-field free energies of a visible assignment.
//!
//! Visible values may be real: every supported topology lacks visible-visible
//! couplings, so `v` enters the energy linearly.

use std::io::Write;

use serde::Serialize;

use crate::enumerate::{check_cap, key_bit, LogSumStats, LogWeightProblem, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::model::{sigmoid, Model};

/// Slack used when checking the bound chain.
pub const BOUND_SLACK: f64 = 1e-9;

/// Hidden-unit view of a model with the visible layer treated as input.
///
/// Hidden units are flattened layer-major; `vis_in` row `i` holds the
/// couplings of hidden unit `i` to the visible layer.
#[derive(Clone, Debug)]
pub(crate) struct HiddenSystem {
    pub n_vis: usize,
    pub n_hid: usize,
    pub vis_bias: Vec<f64>,
    pub hid_bias: Vec<f64>,
    pub vis_in: Vec<f64>,
    pub coupling: Vec<f64>,
    pub shift: f64,
    pub layer_of: Vec<usize>,
}

impl HiddenSystem {
    pub fn new(model: &Model) -> Self {
        Self::build(model, false)
    }

    /// Every layer, the visible one included, treated as enumerable.
    pub fn joint(model: &Model) -> Self {
        Self::build(model, true)
    }

    fn build(model: &Model, joint: bool) -> Self {
        let spec = model.spec();
        let first = if joint { 0 } else { 1 };
        let n_vis = if joint { 0 } else { spec.n_vis() };
        let n_hid = if joint { spec.n_units() } else { spec.n_hid() };
        let base = if joint { 0 } else { spec.layer_size(0) };
        let mut vis_in = vec![0.0; n_hid * n_vis];
        let mut coupling = vec![0.0; n_hid * n_hid];
        for (k, l) in spec.pairs() {
            let w = &model.params().weights[&(k, l)];
            let sk = spec.layer_start(k) - base;
            if l == 0 && !joint {
                for ((i, j), &x) in w.indexed_iter() {
                    vis_in[(sk + i) * n_vis + j] = x;
                }
            } else {
                let sl = spec.layer_start(l) - base;
                for ((i, j), &x) in w.indexed_iter() {
                    coupling[(sk + i) * n_hid + sl + j] = x;
                    coupling[(sl + j) * n_hid + sk + i] = x;
                }
            }
        }
        let biases = model.effective_biases();
        let layer_of = (first..spec.num_layers())
            .flat_map(|k| std::iter::repeat_n(k, spec.layer_size(k)))
            .collect();
        HiddenSystem {
            n_vis,
            n_hid,
            vis_bias: if joint { Vec::new() } else { biases[0].to_vec() },
            hid_bias: biases[first..].iter().flat_map(|b| b.iter().copied()).collect(),
            vis_in,
            coupling,
            shift: model.energy_shift(),
            layer_of,
        }
    }

    pub fn check_visible(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_vis {
            return Err(Error::Shape(format!(
                "visible vector has length {}, expected {}",
                v.len(),
                self.n_vis
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("visible vector".into()));
        }
        Ok(())
    }

    /// Total input to each hidden unit from its bias and the visible layer.
    pub fn hidden_fields(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_hid)
            .map(|i| {
                let row = &self.vis_in[i * self.n_vis..(i + 1) * self.n_vis];
                self.hid_bias[i] + row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// `−E(v, ·)` as a function of all hidden bits.
    pub fn full_problem(&self, v: &[f64]) -> LogWeightProblem {
        LogWeightProblem {
            n: self.n_hid,
            linear: self.hidden_fields(v),
            coupling: self.coupling.clone(),
            constant: self.vis_constant(v),
            summed_bias: Vec::new(),
            summed_coupling: Vec::new(),
        }
    }

    fn vis_constant(&self, v: &[f64]) -> f64 {
        self.vis_bias.iter().zip(v).map(|(b, x)| b * x).sum::<f64>() - self.shift
    }

    /// `−E(v, ·)` with the units in `summed` marginalized analytically.
    /// `summed` must contain no coupled pair.
    pub fn marginal_problem(&self, v: &[f64], summed: &[usize]) -> LogWeightProblem {
        let fields = self.hidden_fields(v);
        let n = self.n_hid;
        let mut is_summed = vec![false; n];
        for &s in summed {
            is_summed[s] = true;
        }
        let kept: Vec<usize> = (0..n).filter(|&i| !is_summed[i]).collect();
        let m = summed.len();
        let mut p = LogWeightProblem::empty(kept.len(), m);
        p.constant = self.vis_constant(v);
        for (a, &i) in kept.iter().enumerate() {
            p.linear[a] = fields[i];
            for (b, &j) in kept.iter().enumerate() {
                p.coupling[a * kept.len() + b] = self.coupling[i * n + j];
            }
            for (r, &s) in summed.iter().enumerate() {
                p.summed_coupling[a * m + r] = self.coupling[i * n + s];
            }
        }
        for (r, &s) in summed.iter().enumerate() {
            p.summed_bias[r] = fields[s];
        }
        p
    }
}

/// Hidden units of the largest set of mutually unconnected hidden layers.
fn summable_units(model: &Model) -> Vec<usize> {
    let spec = model.spec();
    let hidden: Vec<usize> = (1..spec.num_layers()).collect();
    let base = spec.layer_size(0);
    spec.largest_independent_set(&hidden)
        .into_iter()
        .flat_map(|k| {
            let s = spec.layer_start(k) - base;
            s..s + spec.layer_size(k)
        })
        .collect()
}

/// Minimum-energy hidden configuration at a visible point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardMin {
    pub value: f64,
    /// Hidden layers `1..=L`.
    pub hidden: Vec<Vec<u8>>,
    /// Index of the configuration: layer-major bitstring, first unit most significant.
    pub index: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeanFieldInit {
    Uniform(f64),
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldConfig {
    pub max_iters: usize,
    pub damping: f64,
    pub tol: f64,
    pub init: MeanFieldInit,
    /// Also start from the hard-min configuration and keep the lower result.
    pub refine_from_hardmin: bool,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            max_iters: 10_000,
            damping: 0.5,
            tol: 1e-10,
            init: MeanFieldInit::Uniform(0.5),
            refine_from_hardmin: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanFieldResult {
    pub free_energy: f64,
    pub means: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FreeEnergyBundle {
    pub v: Vec<f64>,
    pub exact: f64,
    pub hardmin: f64,
    pub meanfield: f64,
    pub meanfield_converged: bool,
    /// `+inf` when only one hidden configuration exists.
    pub residual: f64,
    pub argmin_hidden: Vec<Vec<u8>>,
    pub argmin_index: u64,
}

impl FreeEnergyBundle {
    /// `F̂ − exp(F̂ − E_res)`.
    pub fn lower_bound(&self) -> f64 {
        self.hardmin - (self.hardmin - self.residual).exp()
    }

    /// `F̂ − F − log(1 + exp(F̂ − E_res))`, zero up to rounding.
    pub fn gap_identity_error(&self) -> f64 {
        self.hardmin - self.exact - (self.hardmin - self.residual).exp().ln_1p()
    }

    /// Descriptions of every violated link of the bound chain.
    pub fn violations(&self, slack: f64) -> Vec<String> {
        let mut out = Vec::new();
        let lower = self.lower_bound();
        if lower > self.exact + slack {
            out.push(format!("lower bound {lower} exceeds F {}", self.exact));
        }
        if self.exact > self.meanfield + slack {
            out.push(format!("F {} exceeds F_MF {}", self.exact, self.meanfield));
        }
        if self.meanfield > self.hardmin + slack {
            out.push(format!("F_MF {} exceeds F_hardmin {}", self.meanfield, self.hardmin));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub bundle: FreeEnergyBundle,
    pub passed: bool,
    pub violations: Vec<String>,
}

/// Free-energy evaluator for one model; reuses the hidden couplings across points.
#[derive(Clone, Debug)]
pub struct FreeEnergy<'m> {
    model: &'m Model,
    system: HiddenSystem,
    summed: Vec<usize>,
    cap: usize,
}

impl<'m> FreeEnergy<'m> {
    pub fn new(model: &'m Model) -> Self {
        FreeEnergy {
            model,
            system: HiddenSystem::new(model),
            summed: summable_units(model),
            cap: DEFAULT_CAP,
        }
    }

    /// Maximum number of enumerated hidden units.
    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    fn full_stats(&self, v: &[f64]) -> Result<LogSumStats> {
        self.system.check_visible(v)?;
        self.system.full_problem(v).enumerate(self.cap)
    }

    /// `F(v) = −log Σ_H exp(−E(v,H))`.
    ///
    /// The largest set of mutually unconnected hidden layers is summed out in
    /// closed form, so only the remaining units count against the cap.
    pub fn exact(&self, v: &[f64]) -> Result<f64> {
        self.system.check_visible(v)?;
        let p = self.system.marginal_problem(v, &self.summed);
        Ok(-p.enumerate(self.cap)?.log_sum())
    }

    pub fn hardmin(&self, v: &[f64]) -> Result<HardMin> {
        let stats = self.full_stats(v)?;
        Ok(HardMin {
            value: -stats.max,
            hidden: self.decode(stats.argmax),
            index: stats.argmax,
        })
    }

    /// `E_res(v) = −log(Σ_H exp(−E(v,H)) − exp(−F̂(v)))`.
    pub fn residual(&self, v: &[f64]) -> Result<f64> {
        Ok(-self.full_stats(v)?.log_rest())
    }

    /// Hidden layers encoded by a configuration index.
    pub fn decode(&self, index: u64) -> Vec<Vec<u8>> {
        let spec = self.model.spec();
        let n = self.system.n_hid;
        let mut out: Vec<Vec<u8>> = (1..spec.num_layers())
            .map(|k| Vec::with_capacity(spec.layer_size(k)))
            .collect();
        for i in 0..n {
            out[self.system.layer_of[i] - 1].push(key_bit(index, n, i));
        }
        out
    }

    pub fn meanfield(&self, v: &[f64], config: &MeanFieldConfig) -> Result<MeanFieldResult> {
        self.system.check_visible(v)?;
        if !(0.0..1.0).contains(&config.damping) {
            return Err(Error::Config(format!("damping {} outside [0,1)", config.damping)));
        }
        let n = self.system.n_hid;
        let start = match &config.init {
            MeanFieldInit::Uniform(p) => vec![*p; n],
            MeanFieldInit::Explicit(mu) => mu.clone(),
        };
        if start.len() != n || start.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("mean-field init must hold one probability per hidden unit".into()));
        }
        let fields = self.system.hidden_fields(v);
        let mut best = self.coordinate_ascent(v, &fields, start, config);
        if config.refine_from_hardmin && check_cap(n, self.cap).is_ok() {
            let argmin = self.full_stats(v)?.argmax;
            let point: Vec<f64> = (0..n).map(|i| key_bit(argmin, n, i) as f64).collect();
            let other = self.coordinate_ascent(v, &fields, point, config);
            if other.free_energy < best.free_energy {
                best = other;
            }
        }
        Ok(best)
    }

    fn coordinate_ascent(
        &self,
        v: &[f64],
        fields: &[f64],
        mut mu: Vec<f64>,
        config: &MeanFieldConfig,
    ) -> MeanFieldResult {
        let n = self.system.n_hid;
        let j = &self.system.coupling;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < config.max_iters {
            iterations += 1;
            let mut change: f64 = 0.0;
            for i in 0..n {
                let row = &j[i * n..(i + 1) * n];
                let input = fields[i] + row.iter().zip(&mu).map(|(w, m)| w * m).sum::<f64>();
                let next = config.damping * mu[i] + (1.0 - config.damping) * sigmoid(input);
                change = change.max((next - mu[i]).abs());
                mu[i] = next;
            }
            if change < config.tol {
                converged = true;
                break;
            }
        }
        let mut neg_energy = self.system.vis_constant(v);
        let mut entropy = 0.0;
        for i in 0..n {
            let row = &j[i * n..(i + 1) * n];
            let pair: f64 = row[i + 1..].iter().zip(&mu[i + 1..]).map(|(w, m)| w * m).sum();
            neg_energy += mu[i] * (fields[i] + pair);
            entropy -= xlogx(mu[i]) + xlogx(1.0 - mu[i]);
        }
        MeanFieldResult {
            free_energy: -neg_energy - entropy,
            means: mu,
            iterations,
            converged,
        }
    }

    /// All free-energy quantities at `v` from a single enumeration.
    pub fn bundle(&self, v: &[f64], config: &MeanFieldConfig) -> Result<FreeEnergyBundle> {
        let stats = self.full_stats(v)?;
        let mf = self.meanfield(v, config)?;
        Ok(FreeEnergyBundle {
            v: v.to_vec(),
            exact: -stats.log_sum(),
            hardmin: -stats.max,
            meanfield: mf.free_energy,
            meanfield_converged: mf.converged,
            residual: -stats.log_rest(),
            argmin_hidden: self.decode(stats.argmax),
            argmin_index: stats.argmax,
        })
    }

    pub fn check_bounds(&self, v: &[f64], config: &MeanFieldConfig) -> Result<BoundCheck> {
        let bundle = self.bundle(v, config)?;
        let violations = bundle.violations(BOUND_SLACK);
        Ok(BoundCheck {
            passed: violations.is_empty(),
            bundle,
            violations,
        })
    }

    /// `E(v, H)` for the configuration with the given index.
    pub fn configuration_energy(&self, v: &[f64], index: u64) -> f64 {
        let n = self.system.n_hid;
        let x: Vec<u8> = (0..n).map(|i| key_bit(index, n, i)).collect();
        -self.system.full_problem(v).value(&x)
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

pub fn exact_free_energy(model: &Model, v: &[f64]) -> Result<f64> {
    FreeEnergy::new(model).exact(v)
}

pub fn hardmin_free_energy(model: &Model, v: &[f64]) -> Result<HardMin> {
    FreeEnergy::new(model).hardmin(v)
}

pub fn meanfield_free_energy(model: &Model, v: &[f64], config: &MeanFieldConfig) -> Result<MeanFieldResult> {
    FreeEnergy::new(model).meanfield(v, config)
}

pub fn residual_energy(model: &Model, v: &[f64]) -> Result<f64> {
    FreeEnergy::new(model).residual(v)
}

pub fn check_bounds(model: &Model, v: &[f64]) -> Result<BoundCheck> {
    FreeEnergy::new(model).check_bounds(v, &MeanFieldConfig::default())
}

/// One varying visible coordinate of an envelope slice.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisRange {
    pub coordinate: usize,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AxisRange {
    pub fn new(coordinate: usize, lo: f64, hi: f64, points: usize) -> Self {
        AxisRange { coordinate, lo, hi, points }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.points == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64
        }
    }
}

/// A 1-D or 2-D visible slice; coordinates not in `axes` are held at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeSlice {
    pub base: Vec<f64>,
    pub axes: Vec<AxisRange>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeSummary {
    pub rows: usize,
    pub argmin_indices: Vec<u64>,
    /// Maximal runs of constant argmin along the axis (1-D slices only).
    pub argmin_runs: Option<usize>,
    /// Exact breakpoints of `F̂` inside the range (1-D slices only).
    pub breakpoints: Option<Vec<f64>>,
}

/// Largest hidden size for which per-configuration line columns are emitted.
pub const MAX_LINE_BITS: usize = 10;

/// Writes the free-energy envelope over a slice as CSV.
pub fn export_envelope(
    model: &Model,
    slice: &EnvelopeSlice,
    config: &MeanFieldConfig,
    sink: &mut dyn Write,
) -> Result<EnvelopeSummary> {
    let fe = FreeEnergy::new(model);
    let n_vis = fe.system.n_vis;
    fe.system.check_visible(&slice.base)?;
    if slice.axes.is_empty() || slice.axes.len() > 2 {
        return Err(Error::Config("envelope slice needs 1 or 2 axes".into()));
    }
    for a in &slice.axes {
        if a.coordinate >= n_vis || a.points == 0 || !(a.lo.is_finite() && a.hi.is_finite()) {
            return Err(Error::Config(format!("invalid envelope axis {a:?}")));
        }
    }
    if slice.axes.len() == 2 && slice.axes[0].coordinate == slice.axes[1].coordinate {
        return Err(Error::Config("envelope axes must differ".into()));
    }
    let n_hid = fe.system.n_hid;
    let one_d = slice.axes.len() == 1;
    let lines = one_d && n_hid <= MAX_LINE_BITS;

    let mut header: Vec<String> = (0..n_vis).map(|j| format!("v{j}")).collect();
    header.extend(["F", "F_hardmin", "F_meanfield", "lower_bound", "argmin"].map(String::from));
    if lines {
        header.extend((0..1u64 << n_hid).map(|h| format!("E_{}", bitstring(h, n_hid))));
    }
    writeln!(sink, "{}", header.join(","))?;

    let points: Vec<Vec<f64>> = match slice.axes.as_slice() {
        [a] => (0..a.points)
            .map(|i| {
                let mut v = slice.base.clone();
                v[a.coordinate] = a.value(i);
                v
            })
            .collect(),
        [a, b] => (0..a.points)
            .flat_map(|i| (0..b.points).map(move |j| (i, j)))
            .map(|(i, j)| {
                let mut v = slice.base.clone();
                v[a.coordinate] = a.value(i);
                v[b.coordinate] = b.value(j);
                v
            })
            .collect(),
        _ => unreachable!(),
    };

    let mut seen = std::collections::BTreeSet::new();
    let mut runs = 0;
    let mut previous = None;
    for v in &points {
        let b = fe.bundle(v, config)?;
        let mut row: Vec<String> = v.iter().map(|&x| real(x)).collect();
        row.extend([b.exact, b.hardmin, b.meanfield, b.lower_bound()].map(real));
        row.push(b.argmin_index.to_string());
        if lines {
            row.extend((0..1u64 << n_hid).map(|h| real(fe.configuration_energy(v, h))));
        }
        writeln!(sink, "{}", row.join(","))?;
        seen.insert(b.argmin_index);
        if previous != Some(b.argmin_index) {
            runs += 1;
            previous = Some(b.argmin_index);
        }
    }

    let breakpoints = if one_d {
        let a = &slice.axes[0];
        let (lo, hi) = if a.lo <= a.hi { (a.lo, a.hi) } else { (a.hi, a.lo) };
        let family = crate::mixtures::slice_family(model, &slice.base, a.coordinate)?;
        let report = crate::mixtures::count_regions_1d(&family, crate::mixtures::Domain::interval(lo, hi))?;
        Some(report.breakpoints)
    } else {
        None
    };

    Ok(EnvelopeSummary {
        rows: points.len(),
        argmin_indices: seen.into_iter().collect(),
        argmin_runs: one_d.then_some(runs),
        breakpoints,
    })
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn bitstring(index: u64, n: usize) -> String {
    (0..n).map(|i| char::from(b'0' + key_bit(index, n, i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructor::{gbm, rescale};
    use crate::model::{NetworkSpec, ParameterInit, Parameters};
    use ndarray::array;
    use std::f64::consts::LN_2;

    fn zero_model(sizes: &[usize]) -> Model {
        Model::build(NetworkSpec::sdbm(sizes).unwrap(), ParameterInit::Zeros).unwrap()
    }

    #[test]
    fn zero_model_values() {
        let m = zero_model(&[2, 1, 2]);
        let fe = FreeEnergy::new(&m);
        for v in [[0.0, 0.0], [1.0, -2.5]] {
            assert!((fe.exact(&v).unwrap() + 3.0 * LN_2).abs() < 1e-12);
            assert_eq!(fe.hardmin(&v).unwrap().value, 0.0);
            assert!((fe.residual(&v).unwrap() + 7f64.ln()).abs() < 1e-12);
            let mf = fe.meanfield(&v, &MeanFieldConfig::default()).unwrap();
            assert!(mf.converged);
            assert!((mf.free_energy + 3.0 * LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn gbm1_hand_values() {
        let m = gbm(1).unwrap();
        let fe = FreeEnergy::new(&m);
        assert!((fe.exact(&[0.0]).unwrap() + LN_2).abs() < 1e-15);
        let h = fe.hardmin(&[0.0]).unwrap();
        assert_eq!((h.value, h.hidden.clone()), (0.0, vec![vec![0]]));
        assert_eq!(fe.residual(&[0.0]).unwrap(), 0.0);
        let h = fe.hardmin(&[2.0]).unwrap();
        assert_eq!((h.value, h.hidden, h.index), (-2.0, vec![vec![1]], 1));
        let mf = fe.meanfield(&[0.0], &MeanFieldConfig::default()).unwrap();
        assert_eq!(mf.means, vec![0.5]);
        assert!((mf.free_energy + LN_2).abs() < 1e-15);
        let b = fe.bundle(&[0.0], &MeanFieldConfig::default()).unwrap();
        assert_eq!(b.lower_bound(), -1.0);
        assert!(b.violations(BOUND_SLACK).is_empty());
    }

    #[test]
    fn rbm_closed_form() {
        let spec = NetworkSpec::rbm(3, 4).unwrap();
        let m = Model::build(spec, ParameterInit::Gaussian { sigma: 1.5, seed: 9 }).unwrap();
        let (spec, mut params) = m.into_parts();
        params.biases[0] = array![0.3, -0.2, 0.7];
        params.biases[1] = array![-1.0, 0.5, 0.0, 2.0];
        let m = Model::from_parts(spec, params).unwrap();
        let w = m.params().weight(1, 0).unwrap();
        let fe = FreeEnergy::new(&m);
        for v in [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [-0.5, 2.0, 0.25]] {
            let va = ndarray::arr1(&v);
            let closed = -m.params().biases[0].dot(&va)
                - (w.dot(&va) + &m.params().biases[1]).iter().map(|&a| crate::model::softplus(a)).sum::<f64>();
            assert!((fe.exact(&v).unwrap() - closed).abs() < 1e-12);
            let full = -fe.full_stats(&v).unwrap().log_sum();
            assert!((full - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_route_matches_full_enumeration() {
        for sizes in [vec![2, 3, 2, 3], vec![1, 2, 2], vec![3, 2, 1, 2, 1]] {
            let spec = NetworkSpec::dbm(&sizes).unwrap();
            let m = Model::build(spec, ParameterInit::Gaussian { sigma: 1.0, seed: 4 }).unwrap();
            let fe = FreeEnergy::new(&m);
            let v: Vec<f64> = (0..sizes[0]).map(|j| j as f64 * 0.7 - 0.3).collect();
            let full = -fe.full_stats(&v).unwrap().log_sum();
            assert!((fe.exact(&v).unwrap() - full).abs() < 1e-12, "{sizes:?}");
        }
    }

    #[test]
    fn centered_model_matches_shifted_biases() {
        let spec = NetworkSpec::sdbm(&[2, 2, 2]).unwrap();
        let m = Model::build(spec.clone(), ParameterInit::Gaussian { sigma: 1.0, seed: 5 }).unwrap();
        let (_, mut params) = m.clone().into_parts();
        params.offsets = Some(vec![array![0.2, 0.9], array![0.5, 0.1], array![0.3, 0.6]]);
        let centered = Model::from_parts(spec.clone(), params).unwrap();
        let mut plain = Parameters::zeros(&spec);
        plain.weights = centered.params().weights.clone();
        plain.biases = centered.effective_biases().to_vec();
        let plain = Model::from_parts(spec, plain).unwrap();
        let v = [1.0, 0.0];
        let a = exact_free_energy(&centered, &v).unwrap();
        let b = exact_free_energy(&plain, &v).unwrap() + centered.energy_shift();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn point_mass_equality_case() {
        let spec = NetworkSpec::sdbm(&[1, 2, 1]).unwrap();
        let m = Model::build(spec, ParameterInit::Gaussian { sigma: 0.5, seed: 2 }).unwrap();
        let (spec, mut params) = m.into_parts();
        params.biases[1][1] += 50.0;
        params.biases[2][0] += 50.0;
        params.biases[1][0] -= 50.0;
        let m = Model::from_parts(spec, params).unwrap();
        let b = FreeEnergy::new(&m).bundle(&[0.5], &MeanFieldConfig::default()).unwrap();
        assert!(b.hardmin - b.exact <= 1e-9);
        assert!(b.gap_identity_error().abs() < 1e-10);
    }

    #[test]
    fn rescaling_sharpens_dominance() {
        let m = rescale(&gbm(2).unwrap(), 100.0).unwrap();
        let fe = FreeEnergy::new(&m);
        let v = [1.3];
        let gap = fe.residual(&v).unwrap() - fe.hardmin(&v).unwrap().value;
        assert!(gap > 10.0);
    }

    #[test]
    fn single_configuration_chain_holds() {
        let spec = NetworkSpec::rbm(1, 1).unwrap();
        let mut p = Parameters::zeros(&spec);
        p.weights.insert((1, 0), array![[3.0]]);
        p.biases[1] = array![-1.0];
        let m = Model::from_parts(spec, p).unwrap();
        for v in [-2.0, 0.0, 0.4, 5.0] {
            assert!(check_bounds(&m, &[v]).unwrap().passed);
        }
        // no hidden layer at all: one configuration, infinite residual
        let solo = Model::build(NetworkSpec::new(vec![2], []).unwrap(), ParameterInit::Zeros).unwrap();
        let b = FreeEnergy::new(&solo).bundle(&[1.0, 0.0], &MeanFieldConfig::default()).unwrap();
        assert_eq!(b.residual, f64::INFINITY);
        assert_eq!(b.exact, b.hardmin);
        assert!(b.violations(BOUND_SLACK).is_empty());
    }

    #[test]
    fn cap_and_shape_errors() {
        let m = zero_model(&[1, 3, 3]);
        let fe = FreeEnergy::new(&m).with_cap(5);
        assert!(fe.hardmin(&[0.0]).is_err());
        assert!(fe.exact(&[0.0]).is_ok());
        assert!(fe.exact(&[0.0, 1.0]).is_err());
        assert!(fe.exact(&[f64::NAN]).is_err());
    }

    #[test]
    fn envelope_for_gbm2() {
        let m = gbm(2).unwrap();
        let slice = EnvelopeSlice {
            base: vec![0.0],
            axes: vec![AxisRange::new(0, -1.0, 4.0, 500)],
        };
        let mut out = Vec::new();
        let summary = export_envelope(&m, &slice, &MeanFieldConfig::default(), &mut out).unwrap();
        assert_eq!(summary.rows, 500);
        assert_eq!(summary.argmin_indices.len(), 4);
        assert_eq!(summary.argmin_runs, Some(4));
        assert_eq!(summary.breakpoints, Some(vec![0.0, 1.0, 2.0]));
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "v0,F,F_hardmin,F_meanfield,lower_bound,argmin,E_00,E_01,E_10,E_11");
        assert_eq!(text.lines().count(), 501);
    }

    #[test]
    fn envelope_for_zero_model() {
        let m = zero_model(&[1, 2]);
        let slice = EnvelopeSlice {
            base: vec![0.0],
            axes: vec![AxisRange::new(0, -1.0, 1.0, 11)],
        };
        let mut out = Vec::new();
        export_envelope(&m, &slice, &MeanFieldConfig::default(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').take(3).map(|c| c.parse().unwrap()).collect();
            assert_eq!(cols[2], 0.0);
            assert!((cols[1] + 2.0 * LN_2).abs() < 1e-15);
        }
    }
}
