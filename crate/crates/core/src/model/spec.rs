use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered layer pair `(k, l)` with `l < k`.
pub type LayerPair = (usize, usize);

/// Connectivity pattern across layer pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// One hidden layer connected to the visible layer.
    Rbm,
    /// Only adjacent layers connected.
    Dbm,
    /// Every layer pair connected.
    Sdbm,
    General,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Topology::Rbm => "RBM",
            Topology::Dbm => "DBM",
            Topology::Sdbm => "sDBM",
            Topology::General => "general",
        };
        f.write_str(name)
    }
}

/// Layer sizes `n^0..n^L` (layer 0 is visible) and the set of connected layer pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_sizes: Vec<usize>,
    mask: BTreeSet<LayerPair>,
}

impl NetworkSpec {
    /// Builds a spec from sizes and connected pairs; pairs may be given in either order.
    pub fn new(layer_sizes: Vec<usize>, pairs: impl IntoIterator<Item = LayerPair>) -> Result<Self> {
        if layer_sizes.is_empty() {
            return Err(Error::InvalidSpec("no layers".into()));
        }
        if let Some(k) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidSpec(format!("layer {k} is empty")));
        }
        let mut mask = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::InvalidSpec(format!(
                    "lateral connections within layer {a} are not supported"
                )));
            }
            let pair = (a.max(b), a.min(b));
            if pair.0 >= layer_sizes.len() {
                return Err(Error::InvalidSpec(format!(
                    "pair ({},{}) refers to a missing layer",
                    pair.0, pair.1
                )));
            }
            mask.insert(pair);
        }
        Ok(NetworkSpec { layer_sizes, mask })
    }

    pub fn rbm(n_vis: usize, n_hid: usize) -> Result<Self> {
        NetworkSpec::new(vec![n_vis, n_hid], [(1, 0)])
    }

    /// Adjacent layers only.
    pub fn dbm(layer_sizes: &[usize]) -> Result<Self> {
        let pairs = (1..layer_sizes.len()).map(|k| (k, k - 1));
        NetworkSpec::new(layer_sizes.to_vec(), pairs)
    }

    /// All layer pairs.
    pub fn sdbm(layer_sizes: &[usize]) -> Result<Self> {
        let n = layer_sizes.len();
        let pairs = (0..n).flat_map(|k| (0..k).map(move |l| (k, l)));
        NetworkSpec::new(layer_sizes.to_vec(), pairs)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_size(&self, k: usize) -> usize {
        self.layer_sizes[k]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len()
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_vis(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_hid(&self) -> usize {
        self.layer_sizes[1..].iter().sum()
    }

    pub fn n_units(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Index of the first unit of layer `k` in the flattened unit order.
    pub fn layer_start(&self, k: usize) -> usize {
        self.layer_sizes[..k].iter().sum()
    }

    pub fn pairs(&self) -> impl Iterator<Item = LayerPair> + '_ {
        self.mask.iter().copied()
    }

    pub fn num_pairs(&self) -> usize {
        self.mask.len()
    }

    /// Whether layers `a` and `b` are connected, in either order.
    pub fn is_connected(&self, a: usize, b: usize) -> bool {
        a != b && self.mask.contains(&(a.max(b), a.min(b)))
    }

    /// Layers connected to `k`, ascending.
    pub fn partners(&self, k: usize) -> Vec<usize> {
        (0..self.num_layers()).filter(|&l| self.is_connected(k, l)).collect()
    }

    pub fn topology(&self) -> Topology {
        let n = self.num_layers();
        let adjacent = self.mask.len() == n.saturating_sub(1) && self.mask.iter().all(|&(k, l)| k == l + 1);
        let full = self.mask.len() == n * (n - 1) / 2;
        if n == 2 && adjacent {
            Topology::Rbm
        } else if adjacent && n > 2 {
            Topology::Dbm
        } else if full && n > 2 {
            Topology::Sdbm
        } else {
            Topology::General
        }
    }

    /// True when no masked pair joins two layers of `layers`.
    pub fn is_independent_set(&self, layers: &[usize]) -> bool {
        layers
            .iter()
            .enumerate()
            .all(|(i, &a)| layers[i + 1..].iter().all(|&b| !self.is_connected(a, b)))
    }

    /// Largest-unit-count subset of `candidates` with no masked pair inside.
    /// Exhaustive up to 16 candidates, greedy by layer size beyond.
    pub fn largest_independent_set(&self, candidates: &[usize]) -> Vec<usize> {
        let units = |set: &[usize]| set.iter().map(|&k| self.layer_sizes[k]).sum::<usize>();
        let mut best = if candidates.len() <= 16 {
            let mut best = Vec::new();
            for mask in 0u32..1 << candidates.len() {
                let set: Vec<usize> = candidates
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| mask >> b & 1 == 1)
                    .map(|(_, &k)| k)
                    .collect();
                if units(&set) > units(&best) && self.is_independent_set(&set) {
                    best = set;
                }
            }
            best
        } else {
            let mut order = candidates.to_vec();
            order.sort_by_key(|&k| std::cmp::Reverse(self.layer_sizes[k]));
            let mut set = Vec::new();
            for k in order {
                set.push(k);
                if !self.is_independent_set(&set) {
                    set.pop();
                }
            }
            set
        };
        best.sort_unstable();
        best
    }

    /// Groups layers into the even/odd parity classes when that schedule is an
    /// exact block-Gibbs schedule (no masked pair within a class).
    pub fn parity_groups(&self) -> Option<[Vec<usize>; 2]> {
        let even: Vec<usize> = (0..self.num_layers()).step_by(2).collect();
        let odd: Vec<usize> = (1..self.num_layers()).step_by(2).collect();
        (self.is_independent_set(&even) && self.is_independent_set(&odd)).then_some([even, odd])
    }
}
