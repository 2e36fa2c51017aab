//! Counting the linear regions of the hard-min free energy.
//!
//! Every hidden configuration `H` contributes an affine function of the
//! visible vector, `E(v,H) = α(H)·v + C(H)`. The hard-min free energy is their
//! lower envelope, and the number of effective mixtures is the number of
//! configurations that are the strict minimizer somewhere. Strict-min regions
//! of an affine family are convex, so counting active configurations counts
//! regions.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{Num, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::enumerate::{check_cap, key_bit, DEFAULT_CAP};
use crate::error::{Error, Result};
use crate::free_energy::{bitstring, HiddenSystem};
use crate::model::{Model, Topology};
use crate::rng::SplitRng;

/// Strictness margin for LP activity.
pub const LP_EPSILON: f64 = 1e-9;
/// Default cap on the gradient-reduced family size for exact LP counting.
pub const DEFAULT_LP_CAP: usize = 4096;
/// Relative tolerance for flagging near-equal gradients or intercepts.
pub const NEAR_TIE_RTOL: f64 = 1e-12;
const MARGIN_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffinePiece {
    /// Configuration index: layer-major bitstring, first unit most significant.
    pub index: u64,
    pub gradient: Vec<f64>,
    pub intercept: f64,
}

impl AffinePiece {
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.intercept + self.gradient.iter().zip(v).map(|(a, x)| a * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AffineFamily {
    pub n_vis: usize,
    pub n_hid: usize,
    pub pieces: Vec<AffinePiece>,
}

/// Affine energy of every hidden configuration, ordered by index.
pub fn affine_family(model: &Model) -> Result<AffineFamily> {
    affine_family_with_cap(model, DEFAULT_CAP)
}

pub fn affine_family_with_cap(model: &Model, cap: usize) -> Result<AffineFamily> {
    let sys = HiddenSystem::new(model);
    let n = sys.n_hid;
    check_cap(n, cap)?;
    let zero = vec![0.0; sys.n_vis];
    let base = sys.full_problem(&zero);
    let pieces = (0..1u64 << n)
        .into_par_iter()
        .map(|index| {
            let x: Vec<u8> = (0..n).map(|i| key_bit(index, n, i)).collect();
            let mut gradient: Vec<f64> = sys.vis_bias.iter().map(|b| -b).collect();
            for (i, _) in x.iter().enumerate().filter(|(_, &b)| b == 1) {
                let row = &sys.vis_in[i * sys.n_vis..(i + 1) * sys.n_vis];
                for (g, w) in gradient.iter_mut().zip(row) {
                    *g -= w;
                }
            }
            AffinePiece {
                index,
                gradient,
                intercept: -base.value(&x),
            }
        })
        .collect();
    Ok(AffineFamily {
        n_vis: sys.n_vis,
        n_hid: n,
        pieces,
    })
}

/// Family restricted to the line through `base` along one visible coordinate.
pub fn slice_family(model: &Model, base: &[f64], coordinate: usize) -> Result<AffineFamily> {
    let family = affine_family(model)?;
    if base.len() != family.n_vis || coordinate >= family.n_vis {
        return Err(Error::Shape("slice base or coordinate does not match the visible layer".into()));
    }
    let pieces = family
        .pieces
        .iter()
        .map(|p| {
            let offset: f64 = p
                .gradient
                .iter()
                .zip(base)
                .enumerate()
                .filter(|(j, _)| *j != coordinate)
                .map(|(_, (a, x))| a * x)
                .sum();
            AffinePiece {
                index: p.index,
                gradient: vec![p.gradient[coordinate]],
                intercept: p.intercept + offset,
            }
        })
        .collect();
    Ok(AffineFamily {
        n_vis: 1,
        n_hid: family.n_hid,
        pieces,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reduction {
    pub family: AffineFamily,
    pub original_size: usize,
    /// Pairs of kept indices whose gradients agree to a relative 1e-12 without
    /// being bit-identical, or a kept index and a dropped one with near-equal intercepts.
    pub near_ties: Vec<(u64, u64)>,
}

fn gradient_key(g: &[f64]) -> Vec<u64> {
    g.iter().map(|&x| if x == 0.0 { 0 } else { x.to_bits() }).collect()
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= NEAR_TIE_RTOL * a.abs().max(b.abs()).max(1.0)
}

/// Keeps, for every distinct gradient, only the piece of smallest intercept.
pub fn reduce_by_gradient(family: &AffineFamily) -> Reduction {
    let mut groups: BTreeMap<Vec<u64>, (usize, Option<usize>)> = BTreeMap::new();
    for (i, p) in family.pieces.iter().enumerate() {
        let entry = groups.entry(gradient_key(&p.gradient)).or_insert((i, None));
        if entry.0 == i {
            continue;
        }
        let best = &family.pieces[entry.0];
        let (winner, loser) = if p.intercept < best.intercept
            || (p.intercept == best.intercept && p.index < best.index)
        {
            (i, entry.0)
        } else {
            (entry.0, i)
        };
        let runner = match entry.1 {
            Some(r) if family.pieces[r].intercept <= family.pieces[loser].intercept => r,
            _ => loser,
        };
        *entry = (winner, Some(runner));
    }
    let mut near_ties = Vec::new();
    let mut kept: Vec<usize> = groups.values().map(|&(w, _)| w).collect();
    for &(w, runner) in groups.values() {
        if let Some(r) = runner {
            let (a, b) = (&family.pieces[w], &family.pieces[r]);
            if near(a.intercept, b.intercept) {
                near_ties.push((a.index, b.index));
            }
        }
    }
    // adjacent gradients in lexicographic order catch most near-duplicates
    kept.sort_by(|&a, &b| {
        family.pieces[a]
            .gradient
            .partial_cmp(&family.pieces[b].gradient)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for pair in kept.windows(2) {
        let (a, b) = (&family.pieces[pair[0]], &family.pieces[pair[1]]);
        if a.gradient.iter().zip(&b.gradient).all(|(x, y)| near(*x, *y)) {
            near_ties.push((a.index.min(b.index), a.index.max(b.index)));
        }
    }
    kept.sort_by_key(|&i| family.pieces[i].index);
    near_ties.sort_unstable();
    Reduction {
        family: AffineFamily {
            n_vis: family.n_vis,
            n_hid: family.n_hid,
            pieces: kept.into_iter().map(|i| family.pieces[i].clone()).collect(),
        },
        original_size: family.pieces.len(),
        near_ties,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    /// All of `R^{N_vis}`.
    All,
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Domain {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Domain::Box {
            lower: vec![lo],
            upper: vec![hi],
        }
    }

    pub fn cube(n: usize, lo: f64, hi: f64) -> Self {
        Domain::Box {
            lower: vec![lo; n],
            upper: vec![hi; n],
        }
    }

    fn check(&self, n_vis: usize) -> Result<()> {
        if let Domain::Box { lower, upper } = self {
            if lower.len() != n_vis || upper.len() != n_vis {
                return Err(Error::Shape(format!("domain box must have {n_vis} coordinates")));
            }
            for (l, u) in lower.iter().zip(upper) {
                if !(l.is_finite() && u.is_finite() && l < u) {
                    return Err(Error::Config(format!("invalid domain bounds [{l}, {u}]")));
                }
            }
        }
        Ok(())
    }

    fn contains(&self, v: &[f64]) -> bool {
        match self {
            Domain::All => true,
            Domain::Box { lower, upper } => v
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, u))| l < x && x < u),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    #[serde(rename = "envelope-1d")]
    Envelope1d,
    LpExact,
    GridEstimate,
    BinaryVertices,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CountMethod {
    /// Envelope for one visible unit, LP below the cap, grid otherwise.
    Auto,
    Envelope1d { exact_arithmetic: bool },
    LpExact { cap: usize },
    /// `resolution` points per axis for up to two visible units, total random points otherwise.
    GridEstimate { resolution: usize, seed: u64 },
    /// Only visible points in `{0,1}^{N_vis}`; not a count of real-space regions.
    BinaryVertices,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActiveRegion {
    pub config: String,
    pub index: u64,
    pub witness: Vec<f64>,
    pub gradient: Vec<f64>,
    pub intercept: f64,
    /// Energy gap to the runner-up at the witness.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport {
    pub count: usize,
    pub method: MethodKind,
    pub domain: Domain,
    /// True when `count` is only a lower bound.
    pub estimate: bool,
    pub family_size: usize,
    pub reduced_size: usize,
    pub near_ties: usize,
    /// Largest witness coordinate magnitude for unbounded LP counts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_radius: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub breakpoints: Vec<f64>,
    pub active: Vec<ActiveRegion>,
}

fn min_gap(pieces: &[AffinePiece], i: usize, v: &[f64]) -> f64 {
    let own = pieces[i].eval(v);
    pieces
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, p)| p.eval(v) - own)
        .fold(f64::INFINITY, f64::min)
}

fn region(family: &AffineFamily, i: usize, witness: Vec<f64>, margin: Option<f64>) -> ActiveRegion {
    let p = &family.pieces[i];
    ActiveRegion {
        config: bitstring(p.index, family.n_hid),
        index: p.index,
        witness,
        gradient: p.gradient.clone(),
        intercept: p.intercept,
        margin,
    }
}

trait Scalar: Num + Clone + PartialOrd {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for BigRational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[derive(Clone)]
struct Line<T> {
    slope: T,
    intercept: T,
    piece: usize,
}

/// Lower envelope of lines: `(hull, breakpoints)` ordered left to right.
/// A line that only touches the envelope at a point is dropped.
fn lower_envelope<T: Scalar>(mut lines: Vec<Line<T>>) -> (Vec<Line<T>>, Vec<T>) {
    lines.sort_by(|a, b| {
        b.slope
            .partial_cmp(&a.slope)
            .unwrap()
            .then(a.intercept.partial_cmp(&b.intercept).unwrap())
            .then(a.piece.cmp(&b.piece))
    });
    lines.dedup_by(|later, earlier| later.slope == earlier.slope);
    let mut hull: Vec<Line<T>> = Vec::with_capacity(lines.len());
    for line in lines {
        while hull.len() >= 2 {
            let a = &hull[hull.len() - 2];
            let b = &hull[hull.len() - 1];
            let lhs = (line.intercept.clone() - a.intercept.clone()) * (a.slope.clone() - b.slope.clone());
            let rhs = (b.intercept.clone() - a.intercept.clone()) * (a.slope.clone() - line.slope.clone());
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(line);
    }
    let breaks = hull
        .windows(2)
        .map(|w| {
            (w[1].intercept.clone() - w[0].intercept.clone()) / (w[0].slope.clone() - w[1].slope.clone())
        })
        .collect();
    (hull, breaks)
}

/// Exact region count for one visible unit by a lower-envelope sweep.
pub fn count_regions_1d(family: &AffineFamily, domain: Domain) -> Result<RegionReport> {
    count_1d::<f64>(family, domain)
}

/// As [`count_regions_1d`], with every comparison in exact rational arithmetic.
pub fn count_regions_1d_exact(family: &AffineFamily, domain: Domain) -> Result<RegionReport> {
    count_1d::<BigRational>(family, domain)
}

fn count_1d<T: Scalar>(family: &AffineFamily, domain: Domain) -> Result<RegionReport> {
    if family.n_vis != 1 {
        return Err(Error::Config(format!(
            "envelope counting needs one visible unit, found {}",
            family.n_vis
        )));
    }
    if family.pieces.is_empty() {
        return Err(Error::Config("empty affine family".into()));
    }
    domain.check(1)?;
    let reduction = reduce_by_gradient(family);
    let reduced = &reduction.family;
    let lines = reduced
        .pieces
        .iter()
        .enumerate()
        .map(|(i, p)| Line {
            slope: T::from_f64(p.gradient[0]),
            intercept: T::from_f64(p.intercept),
            piece: i,
        })
        .collect();
    let (hull, breaks) = lower_envelope::<T>(lines);
    let (lo, hi) = match &domain {
        Domain::All => (None, None),
        Domain::Box { lower, upper } => (Some(T::from_f64(lower[0])), Some(T::from_f64(upper[0]))),
    };
    let two = T::one() + T::one();
    let mut active = Vec::new();
    for (r, line) in hull.iter().enumerate() {
        let left = if r == 0 { None } else { Some(breaks[r - 1].clone()) };
        let right = breaks.get(r).cloned();
        let left = max_opt(left, lo.clone());
        let right = min_opt(right, hi.clone());
        if let (Some(l), Some(u)) = (&left, &right) {
            if l >= u {
                continue;
            }
        }
        let witness = match (left, right) {
            (Some(l), Some(u)) => (l + u) / two.clone(),
            (Some(l), None) => l + T::one(),
            (None, Some(u)) => u - T::one(),
            (None, None) => T::zero(),
        };
        let w = vec![witness.to_f64()];
        let margin = (reduced.pieces.len() <= MARGIN_CAP).then(|| min_gap(&reduced.pieces, line.piece, &w));
        active.push(region(reduced, line.piece, w, margin));
    }
    let breakpoints: Vec<f64> = breaks
        .iter()
        .filter(|b| lo.as_ref().is_none_or(|l| *b > l) && hi.as_ref().is_none_or(|h| *b < h))
        .map(|b| b.to_f64())
        .collect();
    active.sort_by_key(|a| a.index);
    Ok(RegionReport {
        count: active.len(),
        method: MethodKind::Envelope1d,
        domain,
        estimate: false,
        family_size: reduction.original_size,
        reduced_size: reduced.pieces.len(),
        near_ties: reduction.near_ties.len(),
        certificate_radius: None,
        breakpoints,
        active,
    })
}

fn max_opt<T: Scalar>(a: Option<T>, b: Option<T>) -> Option<T> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x >= y { x } else { y }),
        (x, None) => x,
        (None, y) => y,
    }
}

fn min_opt<T: Scalar>(a: Option<T>, b: Option<T>) -> Option<T> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if x <= y { x } else { y }),
        (x, None) => x,
        (None, y) => y,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpOutcome {
    pub active: bool,
    /// Optimal `t`, capped at 1.
    pub margin: f64,
    pub witness: Vec<f64>,
}

fn var_bounds(domain: &Domain, n: usize) -> Vec<(f64, f64)> {
    match domain {
        Domain::All => vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        Domain::Box { lower, upper } => lower.iter().copied().zip(upper.iter().copied()).collect(),
    }
}

/// Decides whether piece `index` of `family` is the strict minimizer anywhere in `domain`.
///
/// Solves `max t` subject to `E_i(v) + t ≤ E_j(v)` for all `j ≠ i`, `t ≤ 1`.
pub fn is_active_lp(family: &AffineFamily, index: usize, domain: &Domain) -> Result<LpOutcome> {
    domain.check(family.n_vis)?;
    if index >= family.pieces.len() {
        return Err(Error::Config(format!("piece {index} out of range")));
    }
    solve_margin_lp(family, index, domain, false)
}

/// Radius of the largest ball inside the strict-min region of piece `index`,
/// capped at the domain size (or 1 for an unbounded domain).
pub fn inscribed_radius(family: &AffineFamily, index: usize, domain: &Domain) -> Result<f64> {
    domain.check(family.n_vis)?;
    Ok(solve_margin_lp(family, index, domain, true)?.margin)
}

fn solve_margin_lp(family: &AffineFamily, index: usize, domain: &Domain, euclidean: bool) -> Result<LpOutcome> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let n = family.n_vis;
    let me = &family.pieces[index];
    let t_max = match (euclidean, domain) {
        (true, Domain::Box { lower, upper }) => lower
            .iter()
            .zip(upper)
            .map(|(l, u)| u - l)
            .fold(f64::INFINITY, f64::min),
        _ => 1.0,
    };
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = var_bounds(domain, n).into_iter().map(|b| lp.add_var(0.0, b)).collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, t_max));
    for (j, other) in family.pieces.iter().enumerate() {
        if j == index {
            continue;
        }
        let diff: Vec<f64> = me.gradient.iter().zip(&other.gradient).map(|(a, b)| a - b).collect();
        let scale = if euclidean {
            diff.iter().map(|d| d * d).sum::<f64>().sqrt()
        } else {
            1.0
        };
        let mut row: Vec<_> = vars.iter().zip(&diff).map(|(&v, &d)| (v, d)).collect();
        row.push((t, scale));
        lp.add_constraint(row.as_slice(), ComparisonOp::Le, other.intercept - me.intercept);
    }
    let solution = lp.solve().map_err(|e| Error::Lp {
        config: bitstring(me.index, family.n_hid),
        message: e.to_string(),
    })?;
    let margin = solution[t];
    let witness: Vec<f64> = vars.iter().map(|&v| solution[v]).collect();
    Ok(LpOutcome {
        active: margin > LP_EPSILON,
        margin,
        witness,
    })
}

/// Half-width of the box that stands in for an unbounded domain in grid sampling.
pub fn default_radius(family: &AffineFamily) -> f64 {
    let max_c = family.pieces.iter().map(|p| p.intercept.abs()).fold(0.0, f64::max);
    let spread = (0..family.n_vis)
        .map(|d| {
            let (lo, hi) = family.pieces.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.gradient[d]), hi.max(p.gradient[d]))
            });
            hi - lo
        })
        .fold(0.0, f64::max);
    let spread = if spread > 0.0 { spread } else { 1.0 };
    4.0 * (1.0 + max_c / spread)
}

/// Counts effective mixtures of a model.
pub fn count_effective_mixtures(model: &Model, method: CountMethod, domain: Domain) -> Result<RegionReport> {
    let family = affine_family(model)?;
    count_family(&family, method, domain)
}

pub fn count_family(family: &AffineFamily, method: CountMethod, domain: Domain) -> Result<RegionReport> {
    domain.check(family.n_vis)?;
    let method = match method {
        CountMethod::Auto if family.n_vis == 1 => CountMethod::Envelope1d { exact_arithmetic: false },
        CountMethod::Auto => {
            let reduced = reduce_by_gradient(family).family.pieces.len();
            if reduced <= DEFAULT_LP_CAP {
                CountMethod::LpExact { cap: DEFAULT_LP_CAP }
            } else {
                CountMethod::GridEstimate {
                    resolution: if family.n_vis <= 2 { 2000 } else { 100_000 },
                    seed: 0,
                }
            }
        }
        m => m,
    };
    match method {
        CountMethod::Envelope1d { exact_arithmetic: false } => count_regions_1d(family, domain),
        CountMethod::Envelope1d { exact_arithmetic: true } => count_regions_1d_exact(family, domain),
        CountMethod::LpExact { cap } => count_lp(family, domain, cap),
        CountMethod::GridEstimate { resolution, seed } => count_grid(family, domain, resolution, seed),
        CountMethod::BinaryVertices => count_vertices(family, domain),
        CountMethod::Auto => unreachable!(),
    }
}

fn count_lp(family: &AffineFamily, domain: Domain, cap: usize) -> Result<RegionReport> {
    let reduction = reduce_by_gradient(family);
    let reduced = &reduction.family;
    if reduced.pieces.len() > cap {
        return Err(Error::SizeCap {
            what: "gradient-reduced family",
            size: reduced.pieces.len(),
            cap,
        });
    }
    let outcomes: Vec<LpOutcome> = (0..reduced.pieces.len())
        .into_par_iter()
        .map(|i| solve_margin_lp(reduced, i, &domain, false))
        .collect::<Result<_>>()?;
    let mut active = Vec::new();
    let mut radius: f64 = 0.0;
    for (i, o) in outcomes.into_iter().enumerate() {
        if o.active {
            radius = o.witness.iter().fold(radius, |r, x| r.max(x.abs()));
            let margin = min_gap(&reduced.pieces, i, &o.witness);
            active.push(region(reduced, i, o.witness, Some(margin)));
        }
    }
    Ok(RegionReport {
        count: active.len(),
        method: MethodKind::LpExact,
        certificate_radius: matches!(domain, Domain::All).then_some(radius),
        domain,
        estimate: false,
        family_size: reduction.original_size,
        reduced_size: reduced.pieces.len(),
        near_ties: reduction.near_ties.len(),
        breakpoints: Vec::new(),
        active,
    })
}

fn count_grid(family: &AffineFamily, domain: Domain, resolution: usize, seed: u64) -> Result<RegionReport> {
    if resolution == 0 {
        return Err(Error::Config("grid resolution must be positive".into()));
    }
    let reduction = reduce_by_gradient(family);
    let reduced = &reduction.family;
    let n = reduced.n_vis;
    let (lower, upper) = match &domain {
        Domain::All => {
            let r = default_radius(reduced);
            (vec![-r; n], vec![r; n])
        }
        Domain::Box { lower, upper } => (lower.clone(), upper.clone()),
    };
    // cell-centred grid so that no point sits on the box boundary
    let axis = |d: usize, i: usize| lower[d] + (upper[d] - lower[d]) * (i as f64 + 0.5) / resolution as f64;
    let mut found: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    match n {
        0 => {
            found.insert(argmin(&reduced.pieces, &[]), Vec::new());
        }
        1 | 2 => {
            let rows = if n == 2 { resolution } else { 1 };
            let per_row: Vec<Vec<(usize, Vec<f64>)>> = (0..rows)
                .into_par_iter()
                .map(|r| {
                    let y = if n == 2 { Some(axis(1, r)) } else { None };
                    let lines = reduced
                        .pieces
                        .iter()
                        .enumerate()
                        .map(|(i, p)| Line {
                            slope: p.gradient[0],
                            intercept: p.intercept + y.map_or(0.0, |y| p.gradient[1] * y),
                            piece: i,
                        })
                        .collect();
                    let (hull, breaks) = lower_envelope::<f64>(lines);
                    let mut out = Vec::new();
                    let mut h = 0;
                    for i in 0..resolution {
                        let x = axis(0, i);
                        while h < breaks.len() && x > breaks[h] {
                            h += 1;
                        }
                        if out.last().is_none_or(|(p, _): &(usize, Vec<f64>)| *p != hull[h].piece) {
                            let mut v = vec![x];
                            v.extend(y);
                            out.push((hull[h].piece, v));
                        }
                    }
                    out
                })
                .collect();
            for (piece, v) in per_row.into_iter().flatten() {
                found.entry(piece).or_insert(v);
            }
        }
        _ => {
            let mut rng = SplitRng::seed(seed);
            for _ in 0..resolution {
                let v: Vec<f64> = (0..n).map(|d| lower[d] + (upper[d] - lower[d]) * rng.uniform()).collect();
                found.entry(argmin(&reduced.pieces, &v)).or_insert(v);
            }
        }
    }
    let with_margin = reduced.pieces.len() <= MARGIN_CAP;
    let active: Vec<ActiveRegion> = found
        .into_iter()
        .map(|(i, w)| {
            let margin = with_margin.then(|| min_gap(&reduced.pieces, i, &w));
            region(reduced, i, w, margin)
        })
        .collect();
    Ok(RegionReport {
        count: active.len(),
        method: MethodKind::GridEstimate,
        domain,
        estimate: true,
        family_size: reduction.original_size,
        reduced_size: reduced.pieces.len(),
        near_ties: reduction.near_ties.len(),
        certificate_radius: None,
        breakpoints: Vec::new(),
        active,
    })
}

fn argmin(pieces: &[AffinePiece], v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_e = f64::INFINITY;
    for (i, p) in pieces.iter().enumerate() {
        let e = p.eval(v);
        if e < best_e {
            best = i;
            best_e = e;
        }
    }
    best
}

fn count_vertices(family: &AffineFamily, domain: Domain) -> Result<RegionReport> {
    let reduction = reduce_by_gradient(family);
    let reduced = &reduction.family;
    let n = reduced.n_vis;
    check_cap(n, DEFAULT_CAP)?;
    let mut found: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    for key in 0..1u64 << n {
        let v: Vec<f64> = (0..n).map(|i| key_bit(key, n, i) as f64).collect();
        if !matches!(domain, Domain::All) && !domain_closed_contains(&domain, &v) {
            continue;
        }
        let i = argmin(&reduced.pieces, &v);
        let gap = min_gap(&reduced.pieces, i, &v);
        if gap > LP_EPSILON {
            found.entry(i).or_insert((v, gap));
        }
    }
    let active: Vec<ActiveRegion> = found
        .into_iter()
        .map(|(i, (w, gap))| region(reduced, i, w, Some(gap)))
        .collect();
    Ok(RegionReport {
        count: active.len(),
        method: MethodKind::BinaryVertices,
        domain,
        estimate: false,
        family_size: reduction.original_size,
        reduced_size: reduced.pieces.len(),
        near_ties: reduction.near_ties.len(),
        certificate_radius: None,
        breakpoints: Vec::new(),
        active,
    })
}

fn domain_closed_contains(domain: &Domain, v: &[f64]) -> bool {
    match domain {
        Domain::All => true,
        Domain::Box { lower, upper } => v
            .iter()
            .zip(lower.iter().zip(upper))
            .all(|(x, (l, u))| l <= x && x <= u),
    }
}

/// `true` if `v` lies strictly inside the strict-min region of piece `index`.
pub fn in_region(family: &AffineFamily, index: usize, v: &[f64], domain: &Domain) -> bool {
    domain.contains(v) && min_gap(&family.pieces, index, v) > 0.0
}

/// `Σ_{j=0}^{n_vis} C(n_hid, j)`.
pub fn rbm_region_formula(n_vis: usize, n_hid: usize) -> BigUint {
    let mut term = BigUint::one();
    let mut total = BigUint::zero();
    for j in 0..=n_vis.min(n_hid) {
        total += &term;
        term = term * BigUint::from(n_hid - j) / BigUint::from(j + 1);
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    /// Every parameter setting stays at or below the value.
    Upper,
    /// Every parameter setting stays strictly below the value.
    StrictUpper,
    /// Every parameter setting reaches at least the value.
    Lower,
    /// Some parameter setting reaches the value; a measured count need not.
    MaximumAtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundEntry {
    pub label: &'static str,
    pub relation: Relation,
    /// Decimal integer.
    pub value: String,
    /// `None` when no count was measured or the entry constrains only the maximum.
    pub holds: Option<bool>,
    /// For `maximum-at-least` entries: whether the measured count attains the value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attained: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub topology: String,
    pub layer_sizes: Vec<usize>,
    pub measured: Option<usize>,
    pub bounds: Vec<BoundEntry>,
    pub passed: bool,
}

impl BoundReport {
    pub fn entry(&self, label: &str) -> Option<&BoundEntry> {
        self.bounds.iter().find(|b| b.label == label)
    }
}

/// Theoretical bounds applicable to the model's topology, checked against `measured`.
pub fn bound_report(model: &Model, measured: Option<usize>) -> BoundReport {
    let spec = model.spec();
    let sizes = spec.layer_sizes().to_vec();
    let n_hid = spec.n_hid();
    let pow2 = |e: usize| BigUint::one() << e;
    let mut bounds = Vec::new();
    let mut push = |label, relation, value: BigUint| {
        let m = measured.map(BigUint::from);
        let (holds, attained) = match (&m, relation) {
            (None, _) => (None, None),
            (Some(m), Relation::Upper) => (Some(*m <= value), None),
            (Some(m), Relation::StrictUpper) => (Some(*m < value), None),
            (Some(m), Relation::Lower) => (Some(*m >= value), None),
            (Some(m), Relation::MaximumAtLeast) => (None, Some(*m == value)),
        };
        bounds.push(BoundEntry {
            label,
            relation,
            value: value.to_string(),
            holds,
            attained,
        });
    };
    push("at-least-one", Relation::Lower, BigUint::one());
    push("hidden-configurations", Relation::Upper, pow2(n_hid));
    let topology = spec.topology();
    match topology {
        Topology::Rbm => push("rbm-arrangement", Relation::Upper, rbm_region_formula(sizes[0], sizes[1])),
        Topology::Dbm => {
            push("dbm-first-layer", Relation::Upper, pow2(sizes[1]));
            push("dbm-rbm-arrangement", Relation::MaximumAtLeast, rbm_region_formula(sizes[0], sizes[1]));
            if sizes[1] > sizes[0] {
                push("dbm-never-full", Relation::StrictUpper, pow2(n_hid));
            }
        }
        Topology::Sdbm => {
            let m = sizes[1];
            if sizes[1..].iter().all(|&s| s == m) && m <= sizes[0] {
                push("sdbm-bundle", Relation::MaximumAtLeast, pow2(n_hid));
            }
        }
        Topology::General => {}
    }
    let passed = bounds.iter().all(|b| b.holds != Some(false));
    BoundReport {
        topology: topology.to_string(),
        layer_sizes: sizes,
        measured,
        bounds,
        passed,
    }
}

/// Active configuration indices of a report, for set comparisons.
pub fn active_indices(report: &RegionReport) -> BTreeSet<u64> {
    report.active.iter().map(|a| a.index).collect()
}
