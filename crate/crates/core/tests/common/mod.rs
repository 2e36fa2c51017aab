//! Random-instance helpers shared by the integration tests.
#![allow(dead_code)]

use sdbm_core::model::{Model, NetworkSpec, ParameterInit};
use sdbm_core::rng::SplitRng;

/// Masked weights `N(0, sigma²)`, biases `N(0, bias_sigma²)`, and optionally
/// offsets drawn uniformly from (0.1, 0.9).
pub fn random_model(spec: NetworkSpec, sigma: f64, bias_sigma: f64, centered: bool, rng: &mut SplitRng) -> Model {
    let seed = rng.index(1 << 30) as u64;
    let (spec, mut p) = Model::build(spec, ParameterInit::Gaussian { sigma, seed })
        .unwrap()
        .into_parts();
    for b in p.biases.iter_mut() {
        b.mapv_inplace(|_| bias_sigma * rng.normal());
    }
    if centered {
        p.offsets = Some(p.biases.iter().map(|b| b.mapv(|_| 0.1 + 0.8 * rng.uniform())).collect());
    }
    Model::from_parts(spec, p).unwrap()
}

/// A random RBM, DBM or sDBM with visible layer `n_vis` and hidden layers
/// of at most `max_width` units, `max_hidden` hidden units in total.
pub fn random_spec(n_vis: usize, max_depth: usize, max_width: usize, max_hidden: usize, rng: &mut SplitRng) -> NetworkSpec {
    loop {
        let depth = 1 + rng.index(max_depth);
        let mut sizes = vec![n_vis];
        sizes.extend((0..depth).map(|_| 1 + rng.index(max_width)));
        if sizes[1..].iter().sum::<usize>() > max_hidden {
            continue;
        }
        return match (depth, rng.index(2)) {
            (1, _) => NetworkSpec::rbm(sizes[0], sizes[1]),
            (_, 0) => NetworkSpec::dbm(&sizes),
            _ => NetworkSpec::sdbm(&sizes),
        }
        .unwrap();
    }
}

pub fn random_rows(n_vis: usize, count: usize, rng: &mut SplitRng) -> Vec<Vec<u8>> {
    (0..count)
        .map(|_| (0..n_vis).map(|_| rng.bernoulli(0.5) as u8).collect())
        .collect()
}
