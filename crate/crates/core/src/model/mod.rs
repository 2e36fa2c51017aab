//! Layered Boltzmann machines over binary units.
//!
//! The energy of a joint state is
//! `E(x) = -Σ_{(k,l) masked} (x^k - μ^k)ᵀ W^{k,l} (x^l - μ^l) - Σ_k b^kᵀ x^k`,
//! where the offsets `μ` default to zero. Expanding the quadratic term gives an
//! equivalent uncentered model with effective biases `b^k - Σ_l W μ^l` and a
//! constant shift; the sampling and enumeration kernels all work on that form.

pub(crate) mod gibbs;
pub mod io;
mod spec;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;

pub use gibbs::{gibbs_sweep, ChainBatch, SweepSchedule};
pub use spec::{LayerPair, NetworkSpec, Topology};

/// Weight blocks, biases and optional centering offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// `W^{k,l}` has shape `n^k × n^l`, keyed by `(k, l)` with `l < k`.
    pub weights: BTreeMap<LayerPair, Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub offsets: Option<Vec<Array1<f64>>>,
}

impl Parameters {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let weights = spec
            .pairs()
            .map(|(k, l)| ((k, l), Array2::zeros((spec.layer_size(k), spec.layer_size(l)))))
            .collect();
        let biases = spec.layer_sizes().iter().map(|&n| Array1::zeros(n)).collect();
        Parameters {
            weights,
            biases,
            offsets: None,
        }
    }

    pub fn weight(&self, k: usize, l: usize) -> Option<&Array2<f64>> {
        self.weights.get(&(k, l))
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.values().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        for (&(k, l), w) in &self.weights {
            if l >= k || k >= spec.num_layers() || !spec.is_connected(k, l) {
                return Err(Error::UnmaskedWeight(k, l));
            }
            let want = (spec.layer_size(k), spec.layer_size(l));
            if w.dim() != want {
                return Err(Error::Shape(format!(
                    "weight block ({k},{l}) is {:?}, expected {want:?}",
                    w.dim()
                )));
            }
        }
        for (k, l) in spec.pairs() {
            if !self.weights.contains_key(&(k, l)) {
                return Err(Error::Shape(format!("missing weight block ({k},{l})")));
            }
        }
        check_layers("biases", &self.biases, spec)?;
        if let Some(offsets) = &self.offsets {
            check_layers("offsets", offsets, spec)?;
            if offsets.iter().flatten().any(|&m| !(0.0..=1.0).contains(&m)) {
                return Err(Error::Config("centering offsets must lie in [0,1]".into()));
            }
        }
        let finite = self.weights.values().flatten().chain(self.biases.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

fn check_layers(what: &str, values: &[Array1<f64>], spec: &NetworkSpec) -> Result<()> {
    if values.len() != spec.num_layers() {
        return Err(Error::Shape(format!(
            "{what} cover {} layers, expected {}",
            values.len(),
            spec.num_layers()
        )));
    }
    for (k, b) in values.iter().enumerate() {
        if b.len() != spec.layer_size(k) {
            return Err(Error::Shape(format!(
                "{what} for layer {k} have length {}, expected {}",
                b.len(),
                spec.layer_size(k)
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum ParameterInit {
    Zeros,
    /// Masked weight blocks i.i.d. `N(0, sigma²)`, biases zero.
    Gaussian { sigma: f64, seed: u64 },
    Explicit(Parameters),
}

/// One 0/1 value per unit, grouped by layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryState {
    layers: Vec<Vec<u8>>,
}

impl BinaryState {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        BinaryState {
            layers: spec.layer_sizes().iter().map(|&n| vec![0; n]).collect(),
        }
    }

    pub fn new(spec: &NetworkSpec, layers: Vec<Vec<u8>>) -> Result<Self> {
        let state = BinaryState { layers };
        state.check(spec)?;
        Ok(state)
    }

    /// Splits a flat unit vector (layer order) into layers.
    pub fn from_flat(spec: &NetworkSpec, flat: &[u8]) -> Result<Self> {
        if flat.len() != spec.n_units() {
            return Err(Error::Shape(format!(
                "state has {} units, expected {}",
                flat.len(),
                spec.n_units()
            )));
        }
        let layers = (0..spec.num_layers())
            .map(|k| {
                let start = spec.layer_start(k);
                flat[start..start + spec.layer_size(k)].to_vec()
            })
            .collect();
        BinaryState::new(spec, layers)
    }

    pub fn layers(&self) -> &[Vec<u8>] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &[u8] {
        &self.layers[k]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut [u8] {
        &mut self.layers[k]
    }

    pub fn visible(&self) -> &[u8] {
        &self.layers[0]
    }

    pub fn flat(&self) -> Vec<u8> {
        self.layers.concat()
    }

    /// Hidden units as a bitstring, layer-major, first unit of layer 1 first.
    pub fn hidden_bitstring(&self) -> String {
        self.layers[1..].iter().flatten().map(|&b| if b == 1 { '1' } else { '0' }).collect()
    }

    pub(crate) fn check(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.num_layers() {
            return Err(Error::Shape(format!(
                "state has {} layers, expected {}",
                self.layers.len(),
                spec.num_layers()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.len() != spec.layer_size(k) {
                return Err(Error::Shape(format!(
                    "layer {k} has {} units, expected {}",
                    layer.len(),
                    spec.layer_size(k)
                )));
            }
            if layer.iter().any(|&b| b > 1) {
                return Err(Error::Shape(format!("layer {k} holds a non-binary value")));
            }
        }
        Ok(())
    }
}

/// Coupling rows arranged for field accumulation: `inbound[k]` lists, for each
/// partner `l` of `k`, an `n^l × n^k` matrix whose row `j` is the input unit
/// `j` of layer `l` sends to every unit of layer `k`.
pub(crate) type InboundTable = Vec<Vec<(usize, Array2<f64>)>>;

/// A network spec bundled with its parameters.
#[derive(Debug)]
pub struct Model {
    spec: NetworkSpec,
    params: Parameters,
    effective_biases: Vec<Array1<f64>>,
    shift: f64,
    inbound: OnceLock<InboundTable>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model {
            spec: self.spec.clone(),
            params: self.params.clone(),
            effective_biases: self.effective_biases.clone(),
            shift: self.shift,
            inbound: OnceLock::new(),
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl Model {
    pub fn build(spec: NetworkSpec, init: ParameterInit) -> Result<Self> {
        let params = match init {
            ParameterInit::Zeros => Parameters::zeros(&spec),
            ParameterInit::Gaussian { sigma, seed } => {
                if !(sigma.is_finite() && sigma >= 0.0) {
                    return Err(Error::Config(format!("invalid gaussian sigma {sigma}")));
                }
                let mut rng = SplitRng::seed(seed);
                let mut params = Parameters::zeros(&spec);
                for w in params.weights.values_mut() {
                    w.mapv_inplace(|_| sigma * rng.normal());
                }
                params
            }
            ParameterInit::Explicit(params) => params,
        };
        Model::from_parts(spec, params)
    }

    pub fn from_parts(spec: NetworkSpec, params: Parameters) -> Result<Self> {
        params.validate(&spec)?;
        let mut model = Model {
            spec,
            params,
            effective_biases: Vec::new(),
            shift: 0.0,
            inbound: OnceLock::new(),
        };
        model.refresh();
        Ok(model)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn into_parts(self) -> (NetworkSpec, Parameters) {
        (self.spec, self.params)
    }

    /// Applies `f` to the parameters and recomputes derived quantities.
    pub(crate) fn update_params(&mut self, f: impl FnOnce(&mut Parameters)) {
        f(&mut self.params);
        self.refresh();
    }

    fn refresh(&mut self) {
        let spec = &self.spec;
        let mut biases = self.params.biases.clone();
        let mut shift = 0.0;
        if let Some(offsets) = &self.params.offsets {
            for (&(k, l), w) in &self.params.weights {
                biases[k] -= &w.dot(&offsets[l]);
                biases[l] -= &w.t().dot(&offsets[k]);
                shift -= offsets[k].dot(&w.dot(&offsets[l]));
            }
        }
        debug_assert_eq!(biases.len(), spec.num_layers());
        self.effective_biases = biases;
        self.shift = shift;
        self.inbound = OnceLock::new();
    }

    /// Biases of the equivalent uncentered model.
    pub fn effective_biases(&self) -> &[Array1<f64>] {
        &self.effective_biases
    }

    /// Constant energy term of the equivalent uncentered model.
    pub fn energy_shift(&self) -> f64 {
        self.shift
    }

    pub fn offsets(&self, k: usize) -> Option<&Array1<f64>> {
        self.params.offsets.as_ref().map(|o| &o[k])
    }

    pub(crate) fn inbound(&self) -> &InboundTable {
        self.inbound.get_or_init(|| {
            (0..self.spec.num_layers())
                .map(|k| {
                    self.spec
                        .partners(k)
                        .into_iter()
                        .map(|l| (l, self.coupling_into(k, l)))
                        .collect()
                })
                .collect()
        })
    }

    /// Matrix of shape `n^l × n^k` mapping layer-`l` activity onto layer-`k` input.
    pub(crate) fn coupling_into(&self, k: usize, l: usize) -> Array2<f64> {
        if l < k {
            self.params.weights[&(k, l)].t().as_standard_layout().into_owned()
        } else {
            self.params.weights[&(l, k)].clone()
        }
    }

    /// Energy of a joint binary state, in nats.
    pub fn energy(&self, state: &BinaryState) -> Result<f64> {
        state.check(&self.spec)?;
        let layers: Vec<Array1<f64>> = state
            .layers()
            .iter()
            .map(|x| x.iter().map(|&b| b as f64).collect())
            .collect();
        Ok(self.energy_of_layers(&layers))
    }

    /// Energy of a real-valued joint assignment, literal centered form.
    pub(crate) fn energy_of_layers(&self, layers: &[Array1<f64>]) -> f64 {
        let centered: Vec<Array1<f64>> = match &self.params.offsets {
            Some(offsets) => layers.iter().zip(offsets).map(|(x, m)| x - m).collect(),
            None => layers.to_vec(),
        };
        let mut energy = 0.0;
        for (&(k, l), w) in &self.params.weights {
            energy -= centered[k].dot(&w.dot(&centered[l]));
        }
        for (b, x) in self.params.biases.iter().zip(layers) {
            energy -= b.dot(x);
        }
        energy
    }

    /// `p(x^k_i = 1 | all other layers)` for every unit of layer `k`.
    pub fn layer_conditional(&self, k: usize, state: &BinaryState) -> Result<Vec<f64>> {
        if k >= self.spec.num_layers() {
            return Err(Error::Shape(format!("layer {k} out of range")));
        }
        state.check(&self.spec)?;
        let mut input = self.effective_biases[k].clone();
        for l in self.spec.partners(k) {
            let x: Array1<f64> = state.layer(l).iter().map(|&b| b as f64).collect();
            if l < k {
                input += &self.params.weights[&(k, l)].dot(&x);
            } else {
                input += &self.params.weights[&(l, k)].t().dot(&x);
            }
        }
        Ok(input.iter().map(|&a| sigmoid(a)).collect())
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^a)` without overflow.
#[inline]
pub fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn gbm1() -> Model {
        let spec = NetworkSpec::sdbm(&[1, 1]).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.weights.insert((1, 0), array![[1.0]]);
        Model::from_parts(spec, params).unwrap()
    }

    #[test]
    fn zero_init_rbm() {
        let model = Model::build(NetworkSpec::rbm(2, 3).unwrap(), ParameterInit::Zeros).unwrap();
        let w = model.params().weight(1, 0).unwrap();
        assert_eq!(w.dim(), (3, 2));
        assert!(w.iter().all(|&x| x == 0.0));
        assert_eq!(model.params().num_parameters(), 6 + 5);
    }

    #[test]
    fn unmasked_block_rejected() {
        let spec = NetworkSpec::rbm(2, 3).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.weights.insert((2, 0), Array2::zeros((3, 2)));
        assert!(matches!(
            Model::build(spec, ParameterInit::Explicit(params)),
            Err(Error::UnmaskedWeight(2, 0))
        ));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let spec = NetworkSpec::rbm(2, 3).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.weights.insert((1, 0), Array2::zeros((2, 2)));
        assert!(matches!(Model::from_parts(spec, params), Err(Error::Shape(_))));
    }

    #[test]
    fn gaussian_init_is_seeded() {
        let spec = NetworkSpec::dbm(&[3, 2, 2]).unwrap();
        let a = Model::build(spec.clone(), ParameterInit::Gaussian { sigma: 0.1, seed: 5 }).unwrap();
        let b = Model::build(spec, ParameterInit::Gaussian { sigma: 0.1, seed: 5 }).unwrap();
        assert_eq!(a, b);
        assert!(a.params().biases.iter().flatten().all(|&x| x == 0.0));
        assert!(a.params().weight(2, 1).unwrap().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn energy_examples() {
        let model = gbm1();
        let zero = BinaryState::zeros(model.spec());
        assert_eq!(model.energy(&zero).unwrap(), 0.0);
        let on = BinaryState::new(model.spec(), vec![vec![1], vec![1]]).unwrap();
        assert_eq!(model.energy(&on).unwrap(), -1.0);
        let bad = BinaryState { layers: vec![vec![1]] };
        assert!(model.energy(&bad).is_err());
    }

    #[test]
    fn conditional_examples() {
        let zero = Model::build(NetworkSpec::sdbm(&[2, 3, 1]).unwrap(), ParameterInit::Zeros).unwrap();
        let state = BinaryState::zeros(zero.spec());
        assert!(zero.layer_conditional(1, &state).unwrap().iter().all(|&p| p == 0.5));
        assert!(zero.layer_conditional(3, &state).is_err());

        let spec = NetworkSpec::rbm(1, 1).unwrap();
        let mut params = Parameters::zeros(&spec);
        params.weights.insert((1, 0), array![[2.0]]);
        params.biases[1] = array![-1.0];
        let rbm = Model::from_parts(spec, params).unwrap();
        let state = BinaryState::new(rbm.spec(), vec![vec![1], vec![0]]).unwrap();
        let p = rbm.layer_conditional(1, &state).unwrap()[0];
        assert!((p - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn centered_shift_matches_literal_energy() {
        let spec = NetworkSpec::sdbm(&[2, 2, 1]).unwrap();
        let mut params = Model::build(spec.clone(), ParameterInit::Gaussian { sigma: 1.0, seed: 9 })
            .unwrap()
            .into_parts()
            .1;
        params.biases[1] = array![0.3, -0.2];
        params.offsets = Some(vec![array![0.2, 0.7], array![0.5, 0.1], array![0.9]]);
        let model = Model::from_parts(spec.clone(), params).unwrap();
        for bits in 0u32..32 {
            let flat: Vec<u8> = (0..5).map(|i| ((bits >> i) & 1) as u8).collect();
            let state = BinaryState::from_flat(&spec, &flat).unwrap();
            let literal = model.energy(&state).unwrap();
            // uncentered form with effective biases and shift
            let mut e = model.energy_shift();
            for (&(k, l), w) in &model.params().weights {
                let xk: Array1<f64> = state.layer(k).iter().map(|&b| b as f64).collect();
                let xl: Array1<f64> = state.layer(l).iter().map(|&b| b as f64).collect();
                e -= xk.dot(&w.dot(&xl));
            }
            for (k, b) in model.effective_biases().iter().enumerate() {
                let x: Array1<f64> = state.layer(k).iter().map(|&b| b as f64).collect();
                e -= b.dot(&x);
            }
            assert!((e - literal).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_helpers() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
