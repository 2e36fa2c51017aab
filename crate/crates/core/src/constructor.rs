//! Constructive parameterizations.
//!
//! `softDeep(L)` builds a chain of `L` single-unit hidden layers over one
//! visible unit whose `2^L` configuration energies are tangent lines of
//! `f(v) = −½(v(v+1) + ¼)`, so every configuration owns a linear region.

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mixtures::{affine_family, Domain};
use crate::model::{LayerPair, Model, NetworkSpec, Parameters};

/// Output of the softDeep recursion for a single-unit-per-layer chain.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoftDeepParams {
    pub depth: usize,
    /// `w^{k,l}` for `0 ≤ l < k ≤ depth`.
    pub weights: BTreeMap<LayerPair, f64>,
    /// `b^0..b^depth`.
    pub biases: Vec<f64>,
}

/// Largest depth whose parameters are exactly representable as `f64`.
pub const MAX_SOFT_DEEP_DEPTH: usize = 52;

pub fn soft_deep_params(depth: usize) -> Result<SoftDeepParams> {
    if depth > MAX_SOFT_DEEP_DEPTH {
        return Err(Error::SizeCap {
            what: "softDeep depth",
            size: depth,
            cap: MAX_SOFT_DEEP_DEPTH,
        });
    }
    let mut weights = BTreeMap::new();
    let mut biases = vec![0.0; depth + 1];
    for top in 1..=depth {
        let x = 2f64.powi(top as i32 - 1);
        weights.insert((top, 0), x);
        biases[top] = 0.5 * x * (1.0 - x);
        for l in 1..top {
            let w = -x * weights[&(l, 0)];
            weights.insert((top, l), w);
        }
    }
    Ok(SoftDeepParams { depth, weights, biases })
}

impl SoftDeepParams {
    /// The first `depth` layers; equals `soft_deep_params(depth)`.
    pub fn truncate(&self, depth: usize) -> Result<SoftDeepParams> {
        if depth > self.depth {
            return Err(Error::Config(format!(
                "cannot truncate depth {} parameters to depth {depth}",
                self.depth
            )));
        }
        Ok(SoftDeepParams {
            depth,
            weights: self
                .weights
                .iter()
                .filter(|((k, _), _)| *k <= depth)
                .map(|(&p, &w)| (p, w))
                .collect(),
            biases: self.biases[..=depth].to_vec(),
        })
    }

    /// The chain as a model with one unit per layer and full connectivity.
    pub fn model(&self) -> Result<Model> {
        bundle_sdbm(1, self.depth, self, 1)
    }
}

/// `gBM(L)`: the softDeep chain as a model.
pub fn gbm(depth: usize) -> Result<Model> {
    soft_deep_params(depth)?.model()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TangencyEntry {
    /// `x^1..x^L`, layer 1 first.
    pub config: String,
    pub slope: f64,
    pub intercept: f64,
    pub xi: f64,
    pub residual: f64,
    /// Discriminant of `line − f`; zero for a tangent.
    pub discriminant: f64,
    /// Integer check: slope equals `−Σ x^k 2^{k−1}` and the line is tangent.
    pub exact: Option<bool>,
    /// Smallest sampled value of `line − f` (should be ≥ 0).
    pub min_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TangencyCertificate {
    pub depth: usize,
    pub entries: Vec<TangencyEntry>,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// `f(v) = −½(v(v+1) + ¼)`.
pub fn tangency_parabola(v: f64) -> f64 {
    -0.5 * (v * (v + 1.0) + 0.25)
}

const TANGENCY_SAMPLES: usize = 1000;
const TANGENCY_RTOL: f64 = 1e-9;

fn as_integer(x: f64) -> Option<i128> {
    (x.fract() == 0.0 && x.abs() < 1e36).then_some(x as i128)
}

/// Checks that every configuration line of the first `depth` layers is tangent
/// to the parabola at `ξ = Σ x^k 2^{k−1} − ½` and lies on or above it.
pub fn tangency_check(params: &SoftDeepParams, depth: usize) -> Result<TangencyCertificate> {
    if depth > params.depth {
        return Err(Error::Config(format!(
            "tangency check at depth {depth} needs parameters of depth ≥ {depth}, got {}",
            params.depth
        )));
    }
    if depth > 20 {
        return Err(Error::SizeCap {
            what: "tangency check depth",
            size: depth,
            cap: 20,
        });
    }
    let lo = -1.5;
    let hi = 2f64.powi(depth as i32) + 0.5;
    let mut entries = Vec::with_capacity(1 << depth);
    let mut failures = Vec::new();
    for code in 0u64..1 << depth {
        let x: Vec<u8> = (1..=depth).map(|k| ((code >> (k - 1)) & 1) as u8).collect();
        let on = |k: usize| x[k - 1] == 1;
        let mut slope = -params.biases[0];
        let mut intercept = 0.0;
        let mut s = 0.0;
        for k in (1..=depth).filter(|&k| on(k)) {
            slope -= params.weights[&(k, 0)];
            intercept -= params.biases[k];
            for l in (1..k).filter(|&l| on(l)) {
                intercept -= params.weights[&(k, l)];
            }
            s += 2f64.powi(k as i32 - 1);
        }
        let xi = s - 0.5;
        let line = |v: f64| slope * v + intercept;
        let scale = tangency_parabola(xi).abs().max(1.0);
        let residual = (line(xi) - tangency_parabola(xi)).abs();
        let discriminant = (0.5 + slope).powi(2) - 2.0 * (intercept + 0.125);
        let exact = match (as_integer(slope), as_integer(intercept), as_integer(s)) {
            (Some(a), Some(c), Some(s)) => Some(a == -s && 4 * s * s - 4 * s - 8 * c == 0),
            _ => None,
        };
        let min_gap = (0..TANGENCY_SAMPLES)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / (TANGENCY_SAMPLES - 1) as f64;
                (line(v) - tangency_parabola(v)) / tangency_parabola(v).abs().max(1.0)
            })
            .fold(f64::INFINITY, f64::min);
        let config: String = x.iter().map(|&b| char::from(b'0' + b)).collect();
        let ok = residual <= TANGENCY_RTOL * scale
            && slope == -s
            && discriminant.abs() <= TANGENCY_RTOL * scale * scale
            && min_gap >= -TANGENCY_RTOL
            && exact != Some(false);
        if !ok {
            failures.push(format!(
                "configuration {config}: slope {slope}, intercept {intercept}, residual {residual}, discriminant {discriminant}"
            ));
        }
        entries.push(TangencyEntry {
            config,
            slope,
            intercept,
            xi,
            residual,
            discriminant,
            exact,
            min_gap,
        });
    }
    Ok(TangencyCertificate {
        depth,
        passed: failures.is_empty(),
        entries,
        failures,
    })
}

/// An sDBM made of `m` independent copies of the first `depth` layers of `base`.
///
/// Layer sizes are `[n_vis, m, …, m]`; unit `j` of every layer talks only to
/// unit `j` of the other layers and visible units `≥ m` are unconnected. The
/// mask stays fully connected; zero blocks carry the independence.
pub fn bundle_sdbm(m: usize, depth: usize, base: &SoftDeepParams, n_vis: usize) -> Result<Model> {
    if m == 0 {
        return Err(Error::InvalidSpec("bundle needs at least one chain".into()));
    }
    if m > n_vis {
        return Err(Error::InvalidSpec(format!("bundle of {m} chains needs at least {m} visible units, got {n_vis}")));
    }
    let base = base.truncate(depth)?;
    let mut sizes = vec![n_vis];
    sizes.extend(std::iter::repeat_n(m, depth));
    let spec = NetworkSpec::sdbm(&sizes)?;
    let mut params = Parameters::zeros(&spec);
    for (&(k, l), &w) in &base.weights {
        let block = params.weights.get_mut(&(k, l)).expect("full mask");
        for j in 0..m {
            block[[j, j]] = w;
        }
    }
    for k in 1..=depth {
        params.biases[k] = Array1::from_elem(m, base.biases[k]);
    }
    params.biases[0] = Array1::from_iter((0..n_vis).map(|j| if j < m { base.biases[0] } else { 0.0 }));
    Model::from_parts(spec, params)
}

/// Multiplies every weight and bias by `beta`; offsets are unchanged.
pub fn rescale(model: &Model, beta: f64) -> Result<Model> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Config(format!("rescale factor must be finite and positive, got {beta}")));
    }
    let (spec, mut params) = model.clone().into_parts();
    for w in params.weights.values_mut() {
        w.mapv_inplace(|x| x * beta);
    }
    for b in &mut params.biases {
        b.mapv_inplace(|x| x * beta);
    }
    Model::from_parts(spec, params)
}

/// `log2 |w̃^{k,l}|` of the softDeep weight magnitudes.
pub fn soft_deep_log2_magnitude(k: usize, l: usize) -> usize {
    if l == 0 {
        k - 1
    } else {
        k + l - 2
    }
}

/// Per-pair L2 strengths `λ^{k,l} = base / |w̃^{k,l}|^η`.
pub fn regularization_schedule(spec: &NetworkSpec, eta: f64, base_strength: f64) -> Result<BTreeMap<LayerPair, f64>> {
    if !eta.is_finite() {
        return Err(Error::Config(format!("eta must be finite, got {eta}")));
    }
    if !(base_strength.is_finite() && base_strength > 0.0) {
        return Err(Error::Config(format!("base strength must be positive, got {base_strength}")));
    }
    spec.pairs()
        .map(|(k, l)| {
            let log = base_strength.ln() - eta * soft_deep_log2_magnitude(k, l) as f64 * std::f64::consts::LN_2;
            let lambda = log.exp();
            if lambda.is_finite() {
                Ok(((k, l), lambda))
            } else {
                Err(Error::NonFinite(format!("regularization strength for pair ({k},{l})")))
            }
        })
        .collect()
}

/// Largest per-configuration energy magnitude allowed after figure rescaling.
pub const FIGURE_ENERGY_LIMIT: f64 = 30.0;

/// `β` that maps the largest `|E(v,H)|` over `domain` to 30 nats.
pub fn figure_rescale_factor(model: &Model, domain: &Domain) -> Result<f64> {
    let family = affine_family(model)?;
    let (lower, upper) = match domain {
        Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
        Domain::All => return Err(Error::Config("figure rescaling needs a bounded domain".into())),
    };
    if lower.len() != family.n_vis || upper.len() != family.n_vis {
        return Err(Error::Shape("domain does not match the visible layer".into()));
    }
    let peak = family
        .pieces
        .iter()
        .map(|p| {
            let (mut hi, mut lo) = (p.intercept, p.intercept);
            for ((a, l), u) in p.gradient.iter().zip(&lower).zip(&upper) {
                hi += (a * l).max(a * u);
                lo += (a * l).min(a * u);
            }
            hi.abs().max(lo.abs())
        })
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(1.0);
    }
    Ok(FIGURE_ENERGY_LIMIT / peak)
}
