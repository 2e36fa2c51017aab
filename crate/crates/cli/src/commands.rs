//! Subcommand settings and their implementations.
//!
//! Every settings struct doubles as the config-file table for its
//! subcommand, so all fields are optional and defaults are filled in at the
//! start of each command before the snapshot is written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use sdbm_core::constructor::{bundle_sdbm, figure_rescale_factor, rescale, soft_deep_params};
use sdbm_core::data::{self, BinaryDataset, ToyKind};
use sdbm_core::evaluation::{
    ais_log_z_with_base, draw_samples, exact_log_z, nearest_neighbors, test_log_likelihood, AisBase,
    AnnealingSchedule, EvaluationReport, LikelihoodMode, LikelihoodSummary, LogZReport, ScheduleSummary,
};
use sdbm_core::free_energy::{export_envelope as write_envelope, AxisRange, EnvelopeSlice, FreeEnergy, MeanFieldConfig};
use sdbm_core::mixtures::{bound_report, count_effective_mixtures, CountMethod, Domain, DEFAULT_LP_CAP};
use sdbm_core::model::io::{self, RealEncoding};
use sdbm_core::model::{Model, NetworkSpec, ParameterInit};
use sdbm_core::training::{self, exact_ll_bits, hyperparam_sweep, preset, Checkpoint, Preset, Trainer};
use sdbm_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{write_snapshot, Global};

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T> {
    value.clone().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn output(global: &Global, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&global.output_dir)?;
    Ok(global.output_dir.join(name))
}

fn parse_init(text: &str, seed: u64) -> Result<ParameterInit> {
    match text.split_once(':') {
        None if text == "zeros" => Ok(ParameterInit::Zeros),
        Some(("gaussian", sigma)) => {
            let sigma: f64 = sigma.parse().map_err(|_| Error::Config(format!("bad gaussian sigma {sigma:?}")))?;
            Ok(ParameterInit::Gaussian { sigma, seed })
        }
        _ => bad(format!("unknown init {text:?}; use zeros or gaussian:<sigma>")),
    }
}

fn parse_domain(text: &str, n_vis: usize) -> Result<Domain> {
    if text == "all" {
        return Ok(Domain::All);
    }
    let parse = |s: &str| -> Result<Vec<f64>> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad domain value {x:?}"))))
            .collect()
    };
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("domain {text:?} is neither \"all\" nor lo:hi")))?;
    let (lo, hi) = (parse(lo)?, parse(hi)?);
    let widen = |v: Vec<f64>| if v.len() == 1 { vec![v[0]; n_vis] } else { v };
    Ok(Domain::Box {
        lower: widen(lo),
        upper: widen(hi),
    })
}

fn parse_axis(text: &str) -> Result<AxisRange> {
    let parts: Vec<&str> = text.split(':').collect();
    let err = || Error::Config(format!("axis {text:?} must look like coordinate:lo:hi:points"));
    if parts.len() != 4 {
        return Err(err());
    }
    Ok(AxisRange::new(
        parts[0].parse().map_err(|_| err())?,
        parts[1].parse().map_err(|_| err())?,
        parts[2].parse().map_err(|_| err())?,
        parts[3].parse().map_err(|_| err())?,
    ))
}

fn parse_base(base: &Option<Vec<f64>>, n_vis: usize) -> Result<Vec<f64>> {
    match base {
        None => Ok(vec![0.0; n_vis]),
        Some(b) if b.len() == n_vis => Ok(b.clone()),
        Some(b) => bad(format!("--base has {} values, the model has {n_vis} visible units", b.len())),
    }
}

fn load_model(path: &Option<PathBuf>) -> Result<Model> {
    io::load(required(path, "model")?)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructArgs {
    /// Single-visible-unit soft-deep chain with L hidden units.
    #[arg(long, value_name = "L")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gbm: Option<usize>,
    /// Bundle of M independent depth-L chains, written MxL.
    #[arg(long, value_name = "MxL")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
    /// Visible units of a bundle (default M).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_vis: Option<usize>,
    /// RBM with N0 visible and N1 hidden units.
    #[arg(long, num_args = 2, value_names = ["N0", "N1"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rbm: Option<Vec<usize>>,
    /// DBM with the given comma-separated layer sizes.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dbm: Option<Vec<usize>>,
    /// Soft-deep BM (all layer pairs) with the given layer sizes.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sdbm: Option<Vec<usize>>,
    /// zeros or gaussian:<sigma>, for --rbm/--dbm/--sdbm (default zeros).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    /// Multiply every parameter by this factor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale: Option<f64>,
    /// decimal or binary (bit patterns).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoding: Option<String>,
}

pub fn construct(global: &Global, mut a: ConstructArgs) -> Result<()> {
    let chosen = [a.gbm.is_some(), a.bundle.is_some(), a.rbm.is_some(), a.dbm.is_some(), a.sdbm.is_some()];
    if chosen.iter().filter(|&&c| c).count() != 1 {
        return bad("choose exactly one of --gbm, --bundle, --rbm, --dbm, --sdbm");
    }
    let mut model = if let Some(depth) = a.gbm {
        soft_deep_params(depth)?.model()?
    } else if let Some(text) = &a.bundle {
        let (m, l) = text
            .split_once('x')
            .and_then(|(m, l)| Some((m.parse::<usize>().ok()?, l.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Config(format!("bundle {text:?} must look like MxL")))?;
        let n_vis = *a.n_vis.get_or_insert(m);
        bundle_sdbm(m, l, &soft_deep_params(l)?, n_vis)?
    } else {
        let spec = match (&a.rbm, &a.dbm, &a.sdbm) {
            (Some(r), _, _) => NetworkSpec::rbm(r[0], r[1])?,
            (_, Some(d), _) => NetworkSpec::dbm(d)?,
            (_, _, Some(s)) => NetworkSpec::sdbm(s)?,
            _ => unreachable!(),
        };
        let init = a.init.get_or_insert_with(|| "zeros".into());
        Model::build(spec, parse_init(init, global.seed)?)?
    };
    if let Some(beta) = a.rescale {
        model = rescale(&model, beta)?;
    }
    let encoding = match a.encoding.get_or_insert_with(|| "decimal".into()).as_str() {
        "decimal" => RealEncoding::Decimal,
        "binary" => RealEncoding::Binary,
        other => return bad(format!("unknown encoding {other:?}; use decimal or binary")),
    };
    write_snapshot(global, "construct", &a)?;
    let path = output(global, "model.json")?;
    io::save(&model, &path, encoding)?;
    print_parameters(&model);
    println!("wrote {}", path.display());
    Ok(())
}

fn print_parameters(model: &Model) {
    let spec = model.spec();
    println!("{} layers {:?}, {} parameters", spec.topology(), spec.layer_sizes(), model.params().num_parameters());
    let small = model.params().num_parameters() <= 64;
    let show = |values: Vec<f64>| -> String {
        if small {
            values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
        } else {
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            format!("max |x| = {max}")
        }
    };
    println!("{:<10} {:<10} values", "param", "shape");
    for ((k, l), w) in &model.params().weights {
        let shape = format!("{}x{}", w.nrows(), w.ncols());
        println!("{:<10} {:<10} {}", format!("w[{k},{l}]"), shape, show(w.iter().copied().collect()));
    }
    for (k, b) in model.params().biases.iter().enumerate() {
        println!("{:<10} {:<10} {}", format!("b[{k}]"), b.len(), show(b.to_vec()));
    }
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Serialize)]
struct Inspection {
    topology: String,
    layer_sizes: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    num_parameters: usize,
    centered: bool,
    exact_ll_bits: usize,
    max_abs_weight: f64,
}

pub fn inspect(global: &Global, a: InspectArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    write_snapshot(global, "inspect", &a)?;
    let spec = model.spec();
    let report = Inspection {
        topology: spec.topology().to_string(),
        layer_sizes: spec.layer_sizes().to_vec(),
        pairs: spec.pairs().collect(),
        num_parameters: model.params().num_parameters(),
        centered: model.params().offsets.is_some(),
        exact_ll_bits: exact_ll_bits(spec),
        max_abs_weight: model.params().weights.values().flatten().fold(0.0, |m, w| m.max(w.abs())),
    };
    write_json(&output(global, "inspect.json")?, &report)?;
    print_parameters(&model);
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionsArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// auto, envelope-1d, lp-exact, grid-estimate or binary-vertices.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// "all" or lo:hi (a cube); per-coordinate bounds as lo1,lo2:hi1,hi2.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    /// Rational arithmetic for envelope-1d.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_arithmetic: Option<bool>,
    /// Largest reduced family lp-exact accepts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_cap: Option<usize>,
    /// Grid points per axis (or total random points above two visible units).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

#[derive(Serialize)]
struct RegionsOutput<'a> {
    report: &'a sdbm_core::mixtures::RegionReport,
    bounds: sdbm_core::mixtures::BoundReport,
}

pub fn regions(global: &Global, mut a: RegionsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let method_name = a.method.get_or_insert_with(|| "auto".into()).clone();
    let domain_text = a.domain.get_or_insert_with(|| "all".into()).clone();
    let method = match method_name.as_str() {
        "auto" => CountMethod::Auto,
        "envelope-1d" => CountMethod::Envelope1d {
            exact_arithmetic: *a.exact_arithmetic.get_or_insert(false),
        },
        "lp-exact" => CountMethod::LpExact {
            cap: *a.lp_cap.get_or_insert(DEFAULT_LP_CAP),
        },
        "grid-estimate" => CountMethod::GridEstimate {
            resolution: *a.resolution.get_or_insert(2000),
            seed: global.seed,
        },
        "binary-vertices" => CountMethod::BinaryVertices,
        other => return bad(format!("unknown method {other:?}")),
    };
    let domain = parse_domain(&domain_text, model.spec().n_vis())?;
    write_snapshot(global, "regions", &a)?;
    let report = count_effective_mixtures(&model, method, domain)?;
    let measured = (!report.estimate).then_some(report.count);
    let out = RegionsOutput {
        report: &report,
        bounds: bound_report(&model, measured),
    };
    write_json(&output(global, "regions.json")?, &out)?;
    println!("count: {}", report.count);
    for b in &out.bounds.bounds {
        let status = match (b.holds, b.attained) {
            (Some(true), _) => "holds",
            (Some(false), _) => "VIOLATED",
            (None, Some(true)) => "attained",
            (None, Some(false)) => "not attained",
            (None, None) => "-",
        };
        println!("bound {:<22} {:?} {:>8}  {status}", b.label, b.relation, b.value);
    }
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Visible coordinate that varies (default 0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Values of the other visible coordinates (default zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct BoundsOutput {
    points: usize,
    violations: Vec<String>,
    max_identity_error: f64,
    passed: bool,
    envelope: sdbm_core::free_energy::EnvelopeSummary,
}

pub fn bounds(global: &Global, mut a: BoundsArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let axis = AxisRange::new(
        *a.coordinate.get_or_insert(0),
        *a.lo.get_or_insert(-3.0),
        *a.hi.get_or_insert(3.0),
        *a.points.get_or_insert(201),
    );
    let base = parse_base(&a.base, model.spec().n_vis())?;
    a.base = Some(base.clone());
    write_snapshot(global, "bounds", &a)?;
    let slice = EnvelopeSlice { base, axes: vec![axis.clone()] };
    let config = MeanFieldConfig::default();
    let mut csv = BufWriter::new(File::create(output(global, "envelope.csv")?)?);
    let summary = write_envelope(&model, &slice, &config, &mut csv)?;
    csv.flush()?;
    let fe = FreeEnergy::new(&model);
    let mut violations = Vec::new();
    let mut max_identity_error: f64 = 0.0;
    for i in 0..axis.points {
        let mut v = slice.base.clone();
        v[axis.coordinate] = axis.value(i);
        let check = fe.check_bounds(&v, &config)?;
        max_identity_error = max_identity_error.max(check.bundle.gap_identity_error());
        violations.extend(check.violations.into_iter().map(|m| format!("v{}={}: {m}", axis.coordinate, axis.value(i))));
    }
    let out = BoundsOutput {
        points: axis.points,
        passed: violations.is_empty(),
        violations,
        max_identity_error,
        envelope: summary,
    };
    write_json(&output(global, "bounds.json")?, &out)?;
    println!(
        "bound violations: {} of {} points; max identity error {:.3e}; {} argmin runs",
        out.violations.len(),
        out.points,
        out.max_identity_error,
        out.envelope.argmin_runs.unwrap_or(0)
    );
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// coordinate:lo:hi:points; give one or two.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<f64>>,
    /// none, auto (largest |energy| over the slice becomes 30 nats) or a factor.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rescale: Option<String>,
}

#[derive(Serialize)]
struct EnvelopeOutput {
    rescale: f64,
    summary: sdbm_core::free_energy::EnvelopeSummary,
}

pub fn export_envelope(global: &Global, mut a: EnvelopeArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let n_vis = model.spec().n_vis();
    let axes = a
        .axis
        .get_or_insert_with(|| vec!["0:-3:3:201".into()])
        .iter()
        .map(|s| parse_axis(s))
        .collect::<Result<Vec<_>>>()?;
    let base = parse_base(&a.base, n_vis)?;
    a.base = Some(base.clone());
    let beta = match a.rescale.get_or_insert_with(|| "none".into()).as_str() {
        "none" => 1.0,
        "auto" => {
            let mut lower = base.clone();
            let mut upper = base.clone();
            for ax in &axes {
                if ax.coordinate >= n_vis {
                    return bad(format!("axis coordinate {} out of range", ax.coordinate));
                }
                lower[ax.coordinate] = ax.lo.min(ax.hi);
                upper[ax.coordinate] = ax.lo.max(ax.hi);
            }
            figure_rescale_factor(&model, &Domain::Box { lower, upper })?
        }
        text => text.parse().map_err(|_| Error::Config(format!("bad rescale {text:?}")))?,
    };
    write_snapshot(global, "export-envelope", &a)?;
    let model = if beta == 1.0 { model } else { rescale(&model, beta)? };
    let slice = EnvelopeSlice { base, axes };
    let mut csv = BufWriter::new(File::create(output(global, "envelope.csv")?)?);
    let summary = write_envelope(&model, &slice, &MeanFieldConfig::default(), &mut csv)?;
    csv.flush()?;
    println!(
        "{} rows, {} distinct argmin configurations{}",
        summary.rows,
        summary.argmin_indices.len(),
        summary
            .breakpoints
            .as_ref()
            .map(|b| format!(", breakpoints {b:?}"))
            .unwrap_or_default()
    );
    write_json(&output(global, "envelope.json")?, &EnvelopeOutput { rescale: beta, summary })?;
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    /// mnist, silhouettes or toy-bas.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Hidden layers of the image presets (default 2).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Starting model; otherwise a fresh model is initialized.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Layer sizes of a fresh soft-deep model when no preset is given.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
    /// Dataset file; the toy preset builds its own.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updates: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pos_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neg_chains: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Base L2 strength of the soft-deep regularizer.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_reg: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset_rate: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_centering: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_every: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_ll_cap: Option<usize>,
    /// A `.state.json` checkpoint sidecar to continue from.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

struct TrainSetup {
    model: Model,
    dataset: BinaryDataset,
    config: training::TrainConfig,
}

fn load_dataset_for(a: &TrainArgs, toy: Option<&ToyKind>, seed: u64) -> Result<BinaryDataset> {
    match (&a.dataset, toy) {
        (Some(path), _) => data::load_dataset(path),
        (None, Some(kind)) => data::toy_dataset(kind, seed),
        (None, None) => bad("--dataset is required"),
    }
}

fn train_setup(global: &Global, a: &mut TrainArgs) -> Result<TrainSetup> {
    let base = match a.preset.as_deref() {
        Some(name) => Some(preset(name.parse::<Preset>()?, *a.depth.get_or_insert(2))?),
        None => None,
    };
    let dataset = load_dataset_for(a, base.as_ref().and_then(|b| b.toy.as_ref()), global.seed)?;
    let mut config = match &base {
        Some(b) => b.config.clone(),
        None => {
            let mut c = training::TrainConfig::new(0.01, 1000, dataset.train.len().min(100));
            c.centering = Some(training::CenteringConfig { offset_update_rate: 0.01 });
            c
        }
    };
    config.seed = global.seed;
    config.total_updates = *a.updates.get_or_insert(config.total_updates);
    config.initial_lr = *a.lr.get_or_insert(config.initial_lr);
    config.batch_size = *a.batch_size.get_or_insert(config.batch_size);
    config.pos_chain_steps = *a.pos_steps.get_or_insert(config.pos_chain_steps);
    config.neg_chain_steps = *a.neg_steps.get_or_insert(config.neg_chain_steps);
    config.num_neg_chains = Some(*a.neg_chains.get_or_insert(config.num_neg_chains()));
    config.momentum = *a.momentum.get_or_insert(config.momentum);
    config.log_every = *a.log_every.get_or_insert(config.log_every);
    config.exact_ll_cap = *a.exact_ll_cap.get_or_insert(config.exact_ll_cap);
    if let Some(every) = a.checkpoint_every.or(config.checkpoint_every) {
        a.checkpoint_every = Some(every);
        config.checkpoint_every = Some(every);
    }
    if *a.no_reg.get_or_insert(false) {
        config.reg = None;
    } else if a.eta.is_some() || a.l2.is_some() || config.reg.is_some() {
        let current = config.reg.clone().unwrap_or(training::RegularizationConfig { eta: 1.0, base_strength: 1e-4 });
        config.reg = Some(training::RegularizationConfig {
            eta: *a.eta.get_or_insert(current.eta),
            base_strength: *a.l2.get_or_insert(current.base_strength),
        });
    }
    if *a.no_centering.get_or_insert(false) {
        config.centering = None;
    } else if a.offset_rate.is_some() || config.centering.is_some() {
        let current = config.centering.as_ref().map_or(0.01, |c| c.offset_update_rate);
        config.centering = Some(training::CenteringConfig {
            offset_update_rate: *a.offset_rate.get_or_insert(current),
        });
    }
    config.validate()?;
    let model = match (&a.model, &base, &a.layers) {
        (Some(path), _, _) => io::load(path)?,
        (None, Some(b), _) => training::init_model(b.spec.clone(), &dataset, config.centering.is_some(), global.seed)?,
        (None, None, Some(layers)) => {
            training::init_model(NetworkSpec::sdbm(layers)?, &dataset, config.centering.is_some(), global.seed)?
        }
        (None, None, None) => return bad("give --preset, --model or --layers"),
    };
    Ok(TrainSetup { model, dataset, config })
}

#[derive(Serialize)]
struct TrainSummary {
    updates: u64,
    final_train_ll: Option<f64>,
    final_test_ll: Option<f64>,
    bernoulli_baseline: f64,
    improvement_over_baseline: Option<f64>,
}

fn summarize(trainer: &Trainer, dataset: &BinaryDataset) -> TrainSummary {
    let last = trainer.metrics().last();
    let baseline = data::bernoulli_baseline(dataset);
    let test = last.and_then(|m| m.test_ll);
    TrainSummary {
        updates: trainer.update_count(),
        final_train_ll: last.and_then(|m| m.train_ll),
        final_test_ll: test,
        bernoulli_baseline: baseline,
        improvement_over_baseline: test.map(|t| t - baseline),
    }
}

/// Runs to completion, writing `metrics.jsonl` from the trainer's full
/// history so a resumed run yields the same file as an uninterrupted one.
fn run_training(trainer: &mut Trainer, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut metrics = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
    for record in trainer.metrics() {
        serde_json::to_writer(&mut metrics, record)?;
        metrics.write_all(b"\n")?;
    }
    let checkpoints = dir.join("checkpoints");
    trainer.run(Some(&mut metrics), Some(&checkpoints))?;
    metrics.flush()?;
    io::save(trainer.model(), dir.join("model.json"), RealEncoding::Binary)?;
    Ok(())
}

pub fn train(global: &Global, mut a: TrainArgs) -> Result<()> {
    let dir = global.output_dir.clone();
    if let Some(state) = a.resume.clone() {
        let name = state.to_string_lossy();
        let model = name
            .strip_suffix(".state.json")
            .map(|stem| PathBuf::from(format!("{stem}.model.json")))
            .ok_or_else(|| Error::Config("--resume expects a .state.json checkpoint".into()))?;
        let mut toy = None;
        if let Some(p) = &a.preset {
            toy = preset(p.parse()?, a.depth.unwrap_or(2))?.toy;
        }
        let dataset = load_dataset_for(&a, toy.as_ref(), global.seed)?;
        write_snapshot(global, "train", &a)?;
        let mut trainer = Trainer::resume(&dataset, &Checkpoint { model, state })?;
        run_training(&mut trainer, &dir)?;
        let summary = summarize(&trainer, &dataset);
        write_json(&dir.join("train.json"), &summary)?;
        return report_training(&summary);
    }
    let setup = train_setup(global, &mut a)?;
    write_snapshot(global, "train", &a)?;
    let mut trainer = Trainer::new(setup.model, &setup.dataset, setup.config)?;
    run_training(&mut trainer, &dir)?;
    let summary = summarize(&trainer, &setup.dataset);
    write_json(&dir.join("train.json"), &summary)?;
    report_training(&summary)
}

fn report_training(s: &TrainSummary) -> Result<()> {
    match s.final_test_ll {
        Some(ll) => println!(
            "updates {}: exact test LL {ll:.4} nats, baseline {:.4}, improvement {:.4}",
            s.updates,
            s.bernoulli_baseline,
            ll - s.bernoulli_baseline
        ),
        None => println!("updates {}: model too large for exact likelihoods; run eval with --ais", s.updates),
    }
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    /// mnist, silhouettes or toy-bas.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Number of configurations (default 16).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Override the preset's update count for every run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updates: Option<u64>,
    /// Only write the sampled configurations.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_only: Option<bool>,
}

#[derive(Serialize)]
struct SweepRun {
    index: usize,
    config: training::TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_test_ll: Option<f64>,
}

pub fn sweep(global: &Global, mut a: SweepArgs) -> Result<()> {
    let which: Preset = a.preset.get_or_insert_with(|| "mnist".into()).parse()?;
    let setup = preset(which, *a.depth.get_or_insert(2))?;
    let ranges = setup.ranges.clone().unwrap_or_else(training::HyperparamRanges::mnist);
    let count = *a.count.get_or_insert(training::DEFAULT_SWEEP_SIZE);
    let mut base = setup.config.clone();
    base.total_updates = *a.updates.get_or_insert(base.total_updates);
    let plan_only = *a.plan_only.get_or_insert(false);
    write_snapshot(global, "sweep", &a)?;
    let configs = hyperparam_sweep(&ranges, &base, count, global.seed)?;
    let mut runs: Vec<SweepRun> = configs
        .into_iter()
        .enumerate()
        .map(|(index, config)| SweepRun { index, config, final_test_ll: None })
        .collect();
    if !plan_only {
        let dataset = match (&a.dataset, &setup.toy) {
            (Some(p), _) => data::load_dataset(p)?,
            (None, Some(kind)) => data::toy_dataset(kind, global.seed)?,
            (None, None) => return bad("--dataset is required unless --plan-only is set"),
        };
        for run in runs.iter_mut() {
            let dir = global.output_dir.join(format!("run-{:02}", run.index));
            let model = training::init_model(setup.spec.clone(), &dataset, true, run.config.seed)?;
            let mut trainer = Trainer::new(model, &dataset, run.config.clone())?;
            run_training(&mut trainer, &dir)?;
            run.final_test_ll = trainer.metrics().last().and_then(|m| m.test_ll);
            let ll = run.final_test_ll.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
            println!("run {:02}: lr {:.3e}, test LL {ll}", run.index, run.config.initial_lr);
        }
    }
    write_json(&output(global, "sweep.json")?, &runs)?;
    println!("{} configurations written", runs.len());
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Toy dataset instead of a file, e.g. bas:3x3 or parity:4.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<String>,
    /// AIS settings as key=value tokens: runs=<n> betas=<n>.
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ais: Option<Vec<String>>,
    /// AIS base: data (visible means of the training split) or uniform.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    /// exact or meanfield free energies per example.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
}

fn parse_toy(text: &str) -> Result<ToyKind> {
    let err = || Error::Config(format!("toy dataset {text:?} must be bas:<w>x<h> or parity:<n>"));
    match text.split_once(':') {
        Some(("bas", size)) => {
            let (w, h) = size.split_once('x').ok_or_else(err)?;
            Ok(ToyKind::BarsAndStripes {
                width: w.parse().map_err(|_| err())?,
                height: h.parse().map_err(|_| err())?,
            })
        }
        Some(("parity", n)) => Ok(ToyKind::Parity { n: n.parse().map_err(|_| err())? }),
        _ => Err(err()),
    }
}

fn eval_dataset(dataset: &Option<PathBuf>, toy: &Option<String>, seed: u64) -> Result<Option<BinaryDataset>> {
    match (dataset, toy) {
        (Some(_), Some(_)) => bad("give either --dataset or --toy"),
        (Some(p), None) => Ok(Some(data::load_dataset(p)?)),
        (None, Some(t)) => Ok(Some(data::toy_dataset(&parse_toy(t)?, seed)?)),
        (None, None) => Ok(None),
    }
}

pub fn eval(global: &Global, mut a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let dataset = eval_dataset(&a.dataset, &a.toy, global.seed)?
        .ok_or_else(|| Error::Config("--dataset or --toy is required".into()))?;
    let exact_feasible = exact_ll_bits(model.spec()) <= sdbm_core::DEFAULT_CAP;
    let mode = a
        .mode
        .get_or_insert_with(|| if exact_feasible { "exact".into() } else { "meanfield".into() })
        .clone();
    let ll_mode = match mode.as_str() {
        "exact" => LikelihoodMode::ExactF,
        "meanfield" => LikelihoodMode::MeanfieldBound(MeanFieldConfig::default()),
        other => return bad(format!("unknown mode {other:?}")),
    };
    let base_name = a.base.get_or_insert_with(|| "data".into()).clone();
    let ais = match &a.ais {
        Some(tokens) => {
            let (mut runs, mut betas) = (100usize, 1000usize);
            for t in tokens.iter().flat_map(|t| t.split(',')) {
                let (k, v) = t.split_once('=').ok_or_else(|| Error::Config(format!("AIS token {t:?} is not key=value")))?;
                let n: usize = v.parse().map_err(|_| Error::Config(format!("AIS value {v:?} is not a count")))?;
                match k {
                    "runs" => runs = n,
                    "betas" => betas = n,
                    _ => return bad(format!("unknown AIS key {k:?}")),
                }
            }
            a.ais = Some(vec![format!("runs={runs}"), format!("betas={betas}")]);
            Some((runs, betas))
        }
        None => None,
    };
    write_snapshot(global, "eval", &a)?;
    let exact = if exact_feasible { Some(exact_log_z(&model)?) } else { None };
    let log_z = match ais {
        Some((runs, num_betas)) => {
            let base = match base_name.as_str() {
                "data" => AisBase::fit(&dataset.means(data::Split::Train), dataset.train.len()),
                "uniform" => AisBase::Uniform,
                other => return bad(format!("unknown AIS base {other:?}")),
            };
            let schedule = AnnealingSchedule::uniform(num_betas, runs)?;
            let r = ais_log_z_with_base(&model, &schedule, &base, global.seed)?;
            LogZReport {
                estimate: r.log_z_estimate,
                ci3: r.ci3,
                method: "ais",
                schedule: Some(ScheduleSummary {
                    num_betas,
                    num_runs: runs,
                    spacing: "linear",
                    seed: global.seed,
                }),
            }
        }
        None => match exact {
            Some(z) => LogZReport {
                estimate: z,
                ci3: (z, z),
                method: "exact",
                schedule: None,
            },
            None => return bad("model too large for exact log Z; pass --ais runs=<n> betas=<n>"),
        },
    };
    let train = test_log_likelihood(&model, &dataset.train, log_z.estimate, &ll_mode)?;
    let test = test_log_likelihood(&model, &dataset.test, log_z.estimate, &ll_mode)?;
    let exact_delta = match (log_z.method, exact) {
        ("ais", Some(z)) => Some(log_z.estimate - z),
        _ => None,
    };
    let report = EvaluationReport {
        log_z,
        ll: LikelihoodSummary {
            mode: if mode == "exact" { "exact" } else { "meanfield" },
            train_mean: train.mean,
            test_mean: test.mean,
            train_ci3: train.ci3,
            test_ci3: test.ci3,
        },
        exact_delta,
    };
    write_json(&output(global, "eval.json")?, &report)?;
    println!(
        "log Z {:.6} ({}), train LL {:.4}, test LL {:.4}{}",
        report.log_z.estimate,
        report.log_z.method,
        report.ll.train_mean,
        report.ll.test_mean,
        report.exact_delta.map(|d| format!(", AIS - exact = {d:.3e}")).unwrap_or_default()
    );
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Dataset whose train and test splits are searched for neighbors.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Serialize)]
struct NeighborRecord {
    sample: usize,
    train: sdbm_core::evaluation::Neighbor,
    test: sdbm_core::evaluation::Neighbor,
}

pub fn sample(global: &Global, mut a: SampleArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let steps = *a.chain_steps.get_or_insert(1000);
    let count = *a.count.get_or_insert(64);
    let dataset = eval_dataset(&a.dataset, &a.toy, global.seed)?;
    write_snapshot(global, "sample", &a)?;
    let samples = draw_samples(&model, count, steps, global.seed)?;
    let mut csv = BufWriter::new(File::create(output(global, "samples.csv")?)?);
    data::write_csv(&samples.states, &mut csv)?;
    csv.flush()?;
    let mut probs = BufWriter::new(File::create(output(global, "sample_probabilities.csv")?)?);
    for row in &samples.probabilities {
        let line: Vec<String> = row.iter().map(|p| format!("{p:.16e}")).collect();
        writeln!(probs, "{}", line.join(","))?;
    }
    probs.flush()?;
    if let Some(ds) = dataset {
        let train = nearest_neighbors(&samples.probabilities, &ds.train)?;
        let test = nearest_neighbors(&samples.probabilities, &ds.test)?;
        let records: Vec<NeighborRecord> = train
            .into_iter()
            .zip(test)
            .enumerate()
            .map(|(sample, (train, test))| NeighborRecord { sample, train, test })
            .collect();
        write_json(&output(global, "neighbors.json")?, &records)?;
    }
    println!("{count} samples after {steps} sweeps");
    Ok(())
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertArgs {
    /// IDX image files (train, test), binarized once with --seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_test: Option<PathBuf>,
    /// SILB binary image files (train, test).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouettes_train: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub silhouettes_test: Option<PathBuf>,
    /// bas:<w>x<h> or parity:<n>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<String>,
    /// Fraction of the training split moved to validation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
    /// Also write train.csv and test.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<bool>,
}

pub fn convert_data(global: &Global, mut a: ConvertArgs) -> Result<()> {
    let mut ds = match (&a.mnist_train, &a.mnist_test, &a.silhouettes_train, &a.silhouettes_test, &a.toy) {
        (Some(tr), Some(te), None, None, None) => data::load_mnist(tr, te, global.seed)?,
        (None, None, Some(tr), Some(te), None) => data::load_silhouettes(tr, te)?,
        (None, None, None, None, Some(t)) => data::toy_dataset(&parse_toy(t)?, global.seed)?,
        _ => return bad("give one source: --mnist-train/--mnist-test, --silhouettes-train/--silhouettes-test, or --toy"),
    };
    let fraction = *a.validation_fraction.get_or_insert(0.0);
    let csv = *a.csv.get_or_insert(false);
    write_snapshot(global, "convert-data", &a)?;
    if fraction > 0.0 {
        ds.split_validation(fraction, global.seed)?;
    }
    data::save_dataset(&ds, &output(global, "dataset.json")?)?;
    if csv {
        for (name, rows) in [("train.csv", &ds.train), ("test.csv", &ds.test)] {
            let mut w = BufWriter::new(File::create(output(global, name)?)?);
            data::write_csv(rows, &mut w)?;
            w.flush()?;
        }
    }
    println!(
        "dataset: {} visible units, {} train / {} test / {} validation rows",
        ds.n_vis,
        ds.train.len(),
        ds.test.len(),
        ds.validation.len()
    );
    Ok(())
}
