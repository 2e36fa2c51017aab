//! Block Gibbs sampling. Units within a layer are conditionally independent
//! (no lateral connections), so each layer is resampled jointly.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{sigmoid, BinaryState, InboundTable, Model, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::SplitRng;

/// Order in which layers are resampled during one sweep.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepSchedule {
    /// Layers one at a time in ascending order.
    #[default]
    Sequential,
    /// Even layers, then odd layers. Exact block Gibbs for bipartite layer graphs.
    Parity,
    /// Explicit groups; every group must be free of masked pairs.
    Groups(Vec<Vec<usize>>),
}

impl SweepSchedule {
    /// Parity when the topology allows it, sequential otherwise.
    pub fn natural(spec: &NetworkSpec) -> Self {
        if spec.parity_groups().is_some() {
            SweepSchedule::Parity
        } else {
            SweepSchedule::Sequential
        }
    }

    /// Flattened layer visiting order, with layer 0 dropped when clamped.
    pub fn resolve(&self, spec: &NetworkSpec, clamp_visible: bool) -> Result<Vec<usize>> {
        let groups: Vec<Vec<usize>> = match self {
            SweepSchedule::Sequential => (0..spec.num_layers()).map(|k| vec![k]).collect(),
            SweepSchedule::Parity => spec
                .parity_groups()
                .ok_or_else(|| Error::Config("parity schedule needs a bipartite layer graph".into()))?
                .to_vec(),
            SweepSchedule::Groups(groups) => {
                let mut seen = vec![false; spec.num_layers()];
                for g in groups {
                    for &k in g {
                        if k >= spec.num_layers() || std::mem::replace(&mut seen[k], true) {
                            return Err(Error::Config(format!("schedule lists layer {k} twice or out of range")));
                        }
                    }
                    if !spec.is_independent_set(g) {
                        return Err(Error::Config(format!("schedule group {g:?} contains connected layers")));
                    }
                }
                groups.clone()
            }
        };
        Ok(groups
            .into_iter()
            .flatten()
            .filter(|&k| !(clamp_visible && k == 0))
            .collect())
    }
}

/// One Gibbs sweep over `state`, resampling layers in schedule order.
pub fn gibbs_sweep(
    model: &Model,
    state: &BinaryState,
    schedule: &SweepSchedule,
    clamp_visible: bool,
    rng: &mut SplitRng,
) -> Result<BinaryState> {
    state.check(model.spec())?;
    let order = schedule.resolve(model.spec(), clamp_visible)?;
    let mut layers: Vec<Vec<f64>> = state
        .layers()
        .iter()
        .map(|x| x.iter().map(|&b| b as f64).collect())
        .collect();
    let biases: Vec<&[f64]> = model
        .effective_biases()
        .iter()
        .map(|b| b.as_slice().expect("contiguous"))
        .collect();
    let mut sampler = LayerSampler::new(model);
    for &k in &order {
        sampler.sample(k, &mut layers, 1.0, biases[k], rng);
    }
    let out = layers
        .into_iter()
        .map(|x| x.into_iter().map(|v| v as u8).collect())
        .collect();
    Ok(BinaryState { layers: out })
}

/// Single-chain layer sampler over the inbound coupling table.
pub(crate) struct LayerSampler<'a> {
    inbound: &'a InboundTable,
    field: Vec<f64>,
}

impl<'a> LayerSampler<'a> {
    pub(crate) fn new(model: &'a Model) -> Self {
        let width = model.spec().layer_sizes().iter().copied().max().unwrap_or(0);
        LayerSampler {
            inbound: model.inbound(),
            field: Vec::with_capacity(width),
        }
    }

    /// Coupling input to layer `k` from the current 0/1 activity of its partners.
    pub(crate) fn coupling_input(&mut self, k: usize, layers: &[Vec<f64>]) -> &[f64] {
        let n = layers[k].len();
        self.field.clear();
        self.field.resize(n, 0.0);
        for (l, table) in &self.inbound[k] {
            for (j, &x) in layers[*l].iter().enumerate() {
                if x != 0.0 {
                    let row = table.row(j);
                    let row = row.as_slice().expect("contiguous");
                    for (f, &w) in self.field.iter_mut().zip(row) {
                        *f += w;
                    }
                }
            }
        }
        &self.field
    }

    /// Resamples layer `k` with couplings scaled by `scale` and the given biases.
    pub(crate) fn sample(&mut self, k: usize, layers: &mut [Vec<f64>], scale: f64, bias: &[f64], rng: &mut SplitRng) {
        self.coupling_input(k, layers);
        let field = std::mem::take(&mut self.field);
        for ((x, &c), &b) in layers[k].iter_mut().zip(&field).zip(bias) {
            *x = if rng.bernoulli(sigmoid(scale * c + b)) { 1.0 } else { 0.0 };
        }
        self.field = field;
    }

    /// Interaction part of the uncentered energy, `-Σ pairs x^kᵀ W x^l`.
    pub(crate) fn interaction_energy(&self, layers: &[Vec<f64>]) -> f64 {
        let mut energy = 0.0;
        for (k, partners) in self.inbound.iter().enumerate() {
            for (l, table) in partners {
                if *l > k {
                    continue;
                }
                for (j, &x) in layers[*l].iter().enumerate() {
                    if x != 0.0 {
                        let row = table.row(j);
                        let row = row.as_slice().expect("contiguous");
                        energy -= row.iter().zip(&layers[k]).map(|(w, x)| w * x).sum::<f64>();
                    }
                }
            }
        }
        energy
    }
}

/// Many chains advanced together; layer `k` of all chains is an
/// `n_chains × n^k` matrix so field computation is a single matrix product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainBatch {
    pub layers: Vec<Array2<f64>>,
    rngs: Vec<SplitRng>,
}

impl ChainBatch {
    /// All-zero chains, one private generator each.
    pub fn zeros(spec: &NetworkSpec, rngs: Vec<SplitRng>) -> Self {
        let n = rngs.len();
        ChainBatch {
            layers: spec.layer_sizes().iter().map(|&m| Array2::zeros((n, m))).collect(),
            rngs,
        }
    }

    /// Chains from explicit layer matrices, one generator per row.
    pub(crate) fn from_parts(layers: Vec<Array2<f64>>, rngs: Vec<SplitRng>) -> Self {
        debug_assert!(layers.iter().all(|x| x.nrows() == rngs.len()));
        ChainBatch { layers, rngs }
    }

    /// Chains with every unit drawn uniformly from {0,1}.
    pub fn uniform(spec: &NetworkSpec, rngs: Vec<SplitRng>) -> Self {
        let mut batch = ChainBatch::zeros(spec, rngs);
        for (r, rng) in batch.rngs.iter_mut().enumerate() {
            for layer in batch.layers.iter_mut() {
                for x in layer.row_mut(r) {
                    *x = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
                }
            }
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.rngs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rngs.is_empty()
    }

    pub fn state(&self, r: usize) -> BinaryState {
        BinaryState {
            layers: self
                .layers
                .iter()
                .map(|x| x.row(r).iter().map(|&v| v as u8).collect())
                .collect(),
        }
    }

    /// Conditional probabilities of layer `k` for all chains.
    pub fn layer_probabilities(&self, model: &Model, k: usize) -> Array2<f64> {
        let spec = model.spec();
        let params = model.params();
        let mut field = Array2::zeros((self.len(), spec.layer_size(k)));
        for l in spec.partners(k) {
            if l < k {
                field += &self.layers[l].dot(&params.weights[&(k, l)].t());
            } else {
                field += &self.layers[l].dot(&params.weights[&(l, k)]);
            }
        }
        field += &model.effective_biases()[k].view().insert_axis(Axis(0));
        field.mapv_inplace(sigmoid);
        field
    }

    pub fn sample_layer(&mut self, model: &Model, k: usize) {
        let probs = self.layer_probabilities(model, k);
        let layer = &mut self.layers[k];
        for ((mut row, p), rng) in layer.rows_mut().into_iter().zip(probs.rows()).zip(self.rngs.iter_mut()) {
            for (x, &p) in row.iter_mut().zip(p) {
                *x = if rng.bernoulli(p) { 1.0 } else { 0.0 };
            }
        }
    }

    pub fn sweep(&mut self, model: &Model, order: &[usize]) {
        for &k in order {
            self.sample_layer(model, k);
        }
    }

    /// Copies visible rows into layer 0 (for clamped chains).
    pub fn clamp_visible(&mut self, rows: &Array2<f64>) {
        self.layers[0].assign(rows);
    }

    /// Per-chain mean of each layer, averaged over chains.
    pub fn layer_means(&self) -> Vec<Array1<f64>> {
        self.layers
            .iter()
            .map(|x| x.mean_axis(Axis(0)).expect("non-empty batch"))
            .collect()
    }
}
