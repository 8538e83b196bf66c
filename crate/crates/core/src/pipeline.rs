//! Subcommand drivers behind the `perturbix` binary.
//!
//! Each command takes a config that is both a set of long flags and a JSON
//! object. [`resolve`] lays a `--config` file over the flag values, and every
//! command writes the config it actually ran with to `config.json` in its
//! output directory, so rerunning from that file reproduces the outputs.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array1;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use crate::constraint_space::{ensemble_compare, feasible_space, project_optimize, EnsembleConfig};
use crate::dynamics::{Preset, PresetOverrides};
use crate::functionals::{entropy, entropy_gradient, entropy_production, kl_divergence, ObservableVector};
use crate::io;
use crate::markov_core::{
    ergodicity_coefficient, invariant_vector, l1, linear_response, perturbed_invariant, response_operator, transient_responses,
    Horizon, PerturbationMatrix, ProbabilityVector, StochasticMatrix,
};
use crate::optimize::{
    entropy_production_coefficients, maximize_kl, maximize_linear_functional, minimize_measure_preserving, ConstraintResiduals,
    Direction, LinearCoefficients, MethodTag, OptimizationResult,
};
use crate::reconstruct::{matrix_log, reconstruct_drift, LogMethod};
use crate::ulam::{estimate_with, marginal, BoxPartition, UlamConfig};
use crate::upo_reduced::{
    maximize_weighted_observable, synthetic_model, weight_response, weighted_average, weighted_profile, ReducedOrbitModel,
};
use crate::{Error, Result};

/// Caps the global rayon pool at `PERTURBIX_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("PERTURBIX_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::ParameterError(format!("PERTURBIX_THREADS must be a positive integer, got `{raw}`")))?;
    // A second call in the same process finds the pool already built.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

/// Flag values overridden key by key by the JSON file, if any.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let mut value = serde_json::to_value(&flags)?;
    let over: Value = io::read_json(path)?;
    if !over.is_object() {
        return Err(Error::Parse(format!("{}: config must be a JSON object", path.display())));
    }
    merge(&mut value, over);
    Ok(serde_json::from_value(value)?)
}

/// Accepts `10000000`, `1e7` or `1_000_000`.
pub fn parse_count(s: &str) -> std::result::Result<usize, String> {
    let s = s.replace('_', "");
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    match s.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 1e18 => Ok(x as usize),
        _ => Err(format!("`{s}` is not a nonnegative integer")),
    }
}

/// `lo:hi` per axis, comma separated: `-2:2,-1.5:1.5`.
pub fn parse_bounds(s: &str) -> std::result::Result<Vec<[f64; 2]>, String> {
    s.split(',')
        .map(|axis| {
            let (lo, hi) = axis.split_once(':').ok_or_else(|| format!("`{axis}` is not lo:hi"))?;
            let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
            let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
            Ok([lo, hi])
        })
        .collect()
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|x| x.trim().parse::<T>().map_err(|e| e.to_string())).collect()
}

fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::ParameterError(format!("missing required `{name}`")))
}

fn prepare_dir<T: Serialize>(dir: &Path, cfg: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::write_json(&dir.join("config.json"), cfg)
}

fn load_chain(path: &Path) -> Result<StochasticMatrix> {
    StochasticMatrix::new(io::read_triplets(path)?)
}

fn stationary(m: &StochasticMatrix, path: Option<&PathBuf>) -> Result<ProbabilityVector> {
    match path {
        Some(p) => ProbabilityVector::normalized(io::read_vector_csv(p)?),
        None => invariant_vector(m, 1e-13, 1_000_000),
    }
}

fn load_perturbation(path: &Path, m: &StochasticMatrix) -> Result<PerturbationMatrix> {
    let p = PerturbationMatrix::unnormalized(io::read_triplets(path)?, m)?;
    Ok(p.normalize().unwrap_or(p))
}

fn parse_horizon(s: &str) -> Result<Horizon> {
    s.parse()
}

// ---------------------------------------------------------------- simulate

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct SimulateConfig {
    /// lanford, dw1d, dw2d, dw2d-rot or l63.
    #[arg(long, default_value = "lanford")]
    pub preset: Preset,
    /// Integration steps (map iterations for lanford).
    #[arg(long, value_parser = parse_count)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_count)]
    pub sample_every: Option<usize>,
    /// Time discarded before recording (l63).
    #[arg(long)]
    pub transient: Option<f64>,
    /// Also write a CSV copy of the trajectory.
    #[arg(long)]
    #[serde(default)]
    pub csv: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Writes `trajectory.bin` and its header `trajectory.json`.
pub fn cmd_simulate(cfg: &SimulateConfig) -> Result<PathBuf> {
    let overrides = PresetOverrides {
        steps: cfg.steps,
        seed: cfg.seed,
        dt: cfg.dt,
        sigma: cfg.sigma,
        alpha: cfg.alpha,
        sample_every: cfg.sample_every,
        transient: cfg.transient,
    };
    let traj = cfg.preset.simulate(&overrides)?;
    prepare_dir(&cfg.out_dir, cfg)?;
    let path = cfg.out_dir.join("trajectory.bin");
    io::write_trajectory(&path, &traj)?;
    if cfg.csv {
        io::write_trajectory_csv(&cfg.out_dir.join("trajectory.csv"), &traj)?;
    }
    Ok(path)
}

// -------------------------------------------------------------------- ulam

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct UlamRunConfig {
    /// Binary trajectory (with JSON header) or CSV.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    /// Sampling interval of a CSV trajectory.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Supplies default bounds and counts.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// `lo:hi` per axis, e.g. `-2:2,-1.5:1.5`.
    #[arg(long, value_parser = parse_bounds)]
    pub bounds: Option<::std::vec::Vec<[f64; 2]>>,
    /// Boxes per axis, e.g. `32,32`.
    #[arg(long, value_parser = parse_list::<usize>)]
    pub counts: Option<::std::vec::Vec<usize>>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub min_occupancy: u64,
    #[arg(long, default_value_t = 0)]
    pub min_transition_count: u64,
    #[arg(long)]
    #[serde(default)]
    pub symmetric_mask: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Sidecar describing a chain estimated from a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamMeta {
    pub partition: BoxPartition,
    pub tau: f64,
    pub lag: usize,
    pub n_states: usize,
    pub retained_index: Vec<usize>,
    /// Visits per retained state.
    pub occupancy: Vec<u64>,
    pub ergodicity_coefficient: f64,
}

/// Writes `matrix.txt`, `stationary.csv`, `occupancy.csv`,
/// `retained_index.csv` and `ulam.json`.
pub fn cmd_ulam(cfg: &UlamRunConfig) -> Result<UlamMeta> {
    let traj = io::read_trajectory(require(&cfg.trajectory, "trajectory")?, cfg.dt)?;
    let (bounds, counts) = match (&cfg.bounds, &cfg.counts, cfg.preset) {
        (Some(b), Some(c), _) => (b.clone(), c.clone()),
        (b, c, Some(p)) => {
            let (db, dc) = p.default_grid();
            (b.clone().unwrap_or(db), c.clone().unwrap_or(dc))
        }
        _ => return Err(Error::ParameterError("give --bounds and --counts, or a --preset".into())),
    };
    let partition = BoxPartition::new(bounds, counts)?;
    let ucfg = UlamConfig {
        min_occupancy: cfg.min_occupancy,
        min_transition_count: cfg.min_transition_count,
        symmetric_mask: cfg.symmetric_mask,
    };
    let est = estimate_with(&traj, &partition, *require(&cfg.tau, "tau")?, &ucfg)?;
    let u = invariant_vector(&est.matrix, 1e-13, 1_000_000)?;
    prepare_dir(&cfg.out_dir, cfg)?;
    let dir = &cfg.out_dir;
    io::write_triplets(&dir.join("matrix.txt"), est.matrix.entries())?;
    io::write_vector_csv(&dir.join("stationary.csv"), u.values())?;
    let occ: Vec<Vec<u64>> = est.occupancy.iter().enumerate().map(|(b, &c)| vec![b as u64, c]).collect();
    io::write_index_csv(&dir.join("occupancy.csv"), &["box", "count"], &occ)?;
    let map: Vec<Vec<usize>> = est.retained_index.iter().enumerate().map(|(s, &b)| vec![s, b]).collect();
    io::write_index_csv(&dir.join("retained_index.csv"), &["state", "box"], &map)?;
    let meta = UlamMeta {
        partition,
        tau: est.tau,
        lag: est.lag,
        n_states: est.matrix.n(),
        occupancy: est.retained_occupancy(),
        retained_index: est.retained_index,
        ergodicity_coefficient: ergodicity_coefficient(&est.matrix),
    };
    io::write_json(&dir.join("ulam.json"), &meta)?;
    Ok(meta)
}

// ---------------------------------------------------------------- optimize

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// `sum u ln u` through the closed form.
    Entropy,
    /// Second-order KL divergence, optionally to a target.
    Kl,
    /// Entropy production, measure preserving.
    EntropyProduction,
    /// User coefficients `sum C_ij P_ij`, measure preserving.
    LinearC,
    /// Weighted orbit observable of a reduced model.
    UpoObservable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConstrainedMethod {
    /// Lagrange multipliers.
    Lagrange,
    /// Orthonormal basis of the feasible space.
    Projection,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeConfig {
    #[arg(long, value_enum)]
    pub objective: Option<Objective>,
    /// Chain in triplet format (not needed for upo-observable).
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Stationary vector CSV; computed when absent.
    #[arg(long)]
    pub stationary: Option<PathBuf>,
    /// max or min; entropy-production defaults to min, everything else to max.
    #[arg(long)]
    pub direction: Option<Direction>,
    /// `inf` or a step count.
    #[arg(long, default_value = "inf")]
    pub horizon: String,
    /// Coefficient matrix for linear-c.
    #[arg(long)]
    pub coefficients: Option<PathBuf>,
    /// Target distribution CSV for kl.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Reduced model JSON for upo-observable.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub observable: Option<String>,
    #[arg(long, value_enum, default_value = "lagrange")]
    pub method: ConstrainedMethod,
    /// Also write `v1(t)` for `t = 0..=T`.
    #[arg(long, value_parser = parse_count)]
    pub transient_steps: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeMeta {
    pub objective: Objective,
    pub direction: Direction,
    pub objective_value: f64,
    pub method_tag: MethodTag,
    pub max_feasible_eps: f64,
    pub n: usize,
    pub residual_column_sum: f64,
    pub residual_measure: f64,
}

fn run_optimizer(cfg: &OptimizeConfig) -> Result<(StochasticMatrix, ProbabilityVector, OptimizationResult, Objective, Direction)> {
    let objective = *require(&cfg.objective, "objective")?;
    let direction = cfg.direction.unwrap_or(match objective {
        Objective::EntropyProduction => Direction::Min,
        _ => Direction::Max,
    });
    let horizon = parse_horizon(&cfg.horizon)?;
    if objective == Objective::UpoObservable {
        let model = ReducedOrbitModel::load(require(&cfg.model, "model")?)?;
        let u = stationary(&model.m, cfg.stationary.as_ref())?;
        let g = response_operator(&model.m, &u, horizon)?;
        let r = maximize_weighted_observable(&model, &u, &g, require(&cfg.observable, "observable")?, direction)?;
        return Ok((model.m, u, r, objective, direction));
    }
    let m = load_chain(require(&cfg.matrix, "matrix")?)?;
    let u = stationary(&m, cfg.stationary.as_ref())?;
    let constrained = |coeffs: LinearCoefficients| match cfg.method {
        ConstrainedMethod::Lagrange => minimize_measure_preserving(&m, &u, &coeffs, direction),
        ConstrainedMethod::Projection => project_optimize(&coeffs, &feasible_space(&m, &u, true)?, direction),
    };
    let r = match objective {
        Objective::Entropy => {
            let g = response_operator(&m, &u, horizon)?;
            maximize_linear_functional(&m, &u, &g, &ObservableVector::new(entropy_gradient(&u))?, direction)?
        }
        Objective::Kl => {
            let g = response_operator(&m, &u, horizon)?;
            let target = cfg.target.as_ref().map(|p| io::read_vector_csv(p).and_then(ProbabilityVector::normalized)).transpose()?;
            maximize_kl(&m, &u, &g, target.as_ref())?
        }
        Objective::EntropyProduction => constrained(entropy_production_coefficients(&m, &u)?)?,
        Objective::LinearC => constrained(LinearCoefficients::new(io::read_triplets(require(&cfg.coefficients, "coefficients")?)?, &m)?)?,
        Objective::UpoObservable => unreachable!("handled above"),
    };
    Ok((m, u, r, objective, direction))
}

/// Writes `perturbation.txt`, `perturbation.json` and optionally
/// `transient.csv` (one column per `t`).
pub fn cmd_optimize(cfg: &OptimizeConfig) -> Result<OptimizeMeta> {
    let (m, u, r, objective, direction) = run_optimizer(cfg)?;
    prepare_dir(&cfg.out_dir, cfg)?;
    io::write_triplets(&cfg.out_dir.join("perturbation.txt"), r.p.entries())?;
    let res = ConstraintResiduals::of(r.p.entries(), &m, &u);
    let meta = OptimizeMeta {
        objective,
        direction,
        objective_value: r.objective_gradient,
        method_tag: r.method_tag,
        max_feasible_eps: r.max_feasible_eps,
        n: m.n(),
        residual_column_sum: res.column_sum,
        residual_measure: res.measure,
    };
    io::write_json(&cfg.out_dir.join("perturbation.json"), &meta)?;
    if let Some(t_max) = cfg.transient_steps {
        let table = transient_responses(&m, &r.p, &u, t_max);
        let headers: Vec<String> = (0..=t_max).map(|t| format!("t{t}")).collect();
        io::write_table_csv(&cfg.out_dir.join("transient.csv"), &headers, &table)?;
    }
    Ok(meta)
}

// ----------------------------------------------------------------- respond

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct RespondConfig {
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub perturbation: Option<PathBuf>,
    #[arg(long)]
    pub stationary: Option<PathBuf>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Transient horizons to tabulate, e.g. `0,1,2,3`.
    #[arg(long, value_parser = parse_list::<usize>, default_value = "")]
    #[serde(default)]
    pub times: ::std::vec::Vec<usize>,
    /// `ulam.json` of the chain; needed for marginals.
    #[arg(long)]
    pub ulam: Option<PathBuf>,
    /// Axes to marginalize onto, e.g. `0` or `0,1`.
    #[arg(long, value_parser = parse_list::<usize>, default_value = "")]
    #[serde(default)]
    pub axes: ::std::vec::Vec<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RespondSummary {
    pub eps: f64,
    pub max_feasible_eps: f64,
    /// `|u + eps v1 - u_eps|_1`.
    pub linear_l1_error: f64,
    /// `|u_eps - u|_1`.
    pub correction_l1: f64,
    pub entropy_change: f64,
    pub kl_divergence: f64,
    pub entropy_production: Option<f64>,
    pub entropy_production_perturbed: Option<f64>,
}

/// Writes `response.csv`, `marginal_axis{k}.csv` and `respond.json`.
pub fn cmd_respond(cfg: &RespondConfig) -> Result<RespondSummary> {
    let m = load_chain(require(&cfg.matrix, "matrix")?)?;
    let u = stationary(&m, cfg.stationary.as_ref())?;
    let p = load_perturbation(require(&cfg.perturbation, "perturbation")?, &m)?;
    let eps = *require(&cfg.eps, "eps")?;
    let g = response_operator(&m, &u, Horizon::Infinite)?;
    let v1 = linear_response(&g, &p, &u);
    let linear = u.values() + &(&v1 * eps);
    let perturbed = perturbed_invariant(&m, &p, eps)?;
    let m_eps = crate::markov_core::perturb(&m, &p, eps)?;

    let mut headers = vec!["u".to_string(), "v1".into(), "u_plus_eps_v1".into(), "u_eps".into()];
    let mut columns = vec![u.values().clone(), v1.clone(), linear.clone(), perturbed.values().clone()];
    if let Some(&t_max) = cfg.times.iter().max() {
        let table = transient_responses(&m, &p, &u, t_max);
        for &t in &cfg.times {
            headers.push(format!("u_plus_eps_v1_t{t}"));
            columns.push(u.values() + &(&table[t] * eps));
        }
    }
    prepare_dir(&cfg.out_dir, cfg)?;
    io::write_table_csv(&cfg.out_dir.join("response.csv"), &headers, &columns)?;

    if !cfg.axes.is_empty() {
        let meta: UlamMeta = io::read_json(require(&cfg.ulam, "ulam")?)?;
        if meta.retained_index.len() != m.n() {
            return Err(Error::LengthMismatch { expected: m.n(), got: meta.retained_index.len() });
        }
        for &axis in &cfg.axes {
            let marg = |v: &Array1<f64>| marginal(v.view(), &meta.partition, &meta.retained_index, axis);
            let bins = meta.partition.counts.get(axis).copied().unwrap_or(0);
            let lo = meta.partition.bounds.get(axis).map_or(0.0, |b| b[0]);
            let w = if bins > 0 { meta.partition.width(axis) } else { 0.0 };
            let centers = Array1::from_shape_fn(bins, |k| lo + (k as f64 + 0.5) * w);
            let cols = vec![centers, marg(u.values())?, marg(&(&v1 * eps))?, marg(&linear)?, marg(perturbed.values())?];
            let hdr: Vec<String> = ["center", "u", "eps_v1", "u_plus_eps_v1", "u_eps"].iter().map(|s| s.to_string()).collect();
            io::write_table_csv(&cfg.out_dir.join(format!("marginal_axis{axis}.csv")), &hdr, &cols)?;
        }
    }

    let symmetric = m.mask_asymmetry().is_none() && m_eps.mask_asymmetry().is_none();
    let summary = RespondSummary {
        eps: eps,
        max_feasible_eps: p.max_feasible_eps(&m),
        linear_l1_error: l1(&(&linear - perturbed.values())),
        correction_l1: l1(&(perturbed.values() - u.values())),
        entropy_change: entropy(perturbed.view())? - entropy(u.view())?,
        kl_divergence: kl_divergence(perturbed.view(), u.view())?,
        entropy_production: if symmetric { Some(entropy_production(&m, &u)?) } else { None },
        entropy_production_perturbed: if symmetric { Some(entropy_production(&m_eps, &perturbed)?) } else { None },
    };
    io::write_json(&cfg.out_dir.join("respond.json"), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------- reconstruct

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructConfig {
    /// Chain whose generator gives the drift.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Perturbation read directly as a rate flux; takes precedence over the
    /// generator when given.
    #[arg(long)]
    pub perturbation: Option<PathBuf>,
    /// `ulam.json` of the chain.
    #[arg(long)]
    pub ulam: Option<PathBuf>,
    /// series, eigen, auto or truncated:K.
    #[arg(long, default_value = "auto")]
    pub method: String,
    #[arg(long, default_value_t = 1e-14)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_terms: usize,
    /// Report only states visited at least this often.
    #[arg(long, default_value_t = 100)]
    pub min_occupancy: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Writes `field.csv`; returns the number of rows.
pub fn cmd_reconstruct(cfg: &ReconstructConfig) -> Result<usize> {
    let meta: UlamMeta = io::read_json(require(&cfg.ulam, "ulam")?)?;
    let m = load_chain(require(&cfg.matrix, "matrix")?)?;
    if m.n() != meta.retained_index.len() {
        return Err(Error::LengthMismatch { expected: meta.retained_index.len(), got: m.n() });
    }
    let rates = match &cfg.perturbation {
        Some(path) => load_perturbation(path, &m)?.entries() / meta.tau,
        None => {
            let method: LogMethod = cfg.method.parse()?;
            matrix_log(&m, meta.tau, method, cfg.tol, cfg.max_terms)?.into_entries()
        }
    };
    let field = reconstruct_drift(&rates, &meta.partition, &meta.retained_index)?;
    let field = field.select(|r| meta.occupancy[r] >= cfg.min_occupancy);
    prepare_dir(&cfg.out_dir, cfg)?;
    io::write_field_csv(&cfg.out_dir.join("field.csv"), &field)?;
    Ok(field.len())
}

// --------------------------------------------------------------------- upo

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct UpoConfig {
    /// Model JSON; the seeded synthetic 17-orbit model is used when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 2024)]
    pub synthetic_seed: u64,
    #[arg(long, default_value = "energy")]
    pub observable: String,
    #[arg(long, default_value = "max")]
    pub direction: Direction,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    /// Profile to reweight, if the model has one.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UpoSummary {
    pub observable: String,
    pub average: f64,
    /// `sum h_i dw_i` at unit norm.
    pub average_response: f64,
    pub max_feasible_eps: f64,
}

/// Writes `weights.csv` (w, dw), `perturbation.txt`, `upo.json` and
/// optionally `profile.csv`.
pub fn cmd_upo(cfg: &UpoConfig) -> Result<UpoSummary> {
    let model = match &cfg.model {
        Some(p) => ReducedOrbitModel::load(p)?,
        None => synthetic_model(cfg.synthetic_seed),
    };
    let u = invariant_vector(&model.m, 1e-14, 1_000_000)?;
    let g = response_operator(&model.m, &u, Horizon::Infinite)?;
    let (average, w) = weighted_average(&model, &u, &cfg.observable)?;
    let r = maximize_weighted_observable(&model, &u, &g, &cfg.observable, cfg.direction)?;
    let dw = weight_response(&model, &u, &linear_response(&g, &r.p, &u))?;
    prepare_dir(&cfg.out_dir, cfg)?;
    if cfg.model.is_none() {
        std::fs::write(cfg.out_dir.join("model.json"), model.to_json_string()?)?;
    }
    io::write_table_csv(&cfg.out_dir.join("weights.csv"), &["w".into(), "dw".into()], &[w.clone(), dw.clone()])?;
    io::write_triplets(&cfg.out_dir.join("perturbation.txt"), r.p.entries())?;
    if let Some(name) = &cfg.profile {
        let grid = Array1::from(model.profile(name)?.grid.clone());
        let base = weighted_profile(&model, &w, name)?;
        let moved = weighted_profile(&model, &(&w + &(&dw * cfg.eps)), name)?;
        let hdr = ["grid", "base", "perturbed"].map(String::from);
        io::write_table_csv(&cfg.out_dir.join("profile.csv"), &hdr, &[grid, base, moved])?;
    }
    let summary = UpoSummary {
        observable: cfg.observable.clone(),
        average,
        average_response: r.objective_gradient,
        max_feasible_eps: r.max_feasible_eps,
    };
    io::write_json(&cfg.out_dir.join("upo.json"), &summary)?;
    Ok(summary)
}

// -------------------------------------------------------- ensemble-compare

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleRunConfig {
    #[arg(long, default_value_t = 200, value_parser = parse_count)]
    pub count: usize,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sparsity: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dominance: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Writes `ensemble_report.json`.
pub fn cmd_ensemble_compare(cfg: &EnsembleRunConfig) -> Result<crate::constraint_space::EnsembleReport> {
    let report = ensemble_compare(&EnsembleConfig {
        count: cfg.count,
        n: cfg.n,
        sparsity: cfg.sparsity,
        dominance: cfg.dominance,
        eps: cfg.eps,
        seed: cfg.seed,
    })?;
    prepare_dir(&cfg.out_dir, cfg)?;
    io::write_json(&cfg.out_dir.join("ensemble_report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_lists() {
        assert_eq!(parse_count("1e7"), Ok(10_000_000));
        assert_eq!(parse_count("1_000"), Ok(1000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
        assert_eq!(parse_bounds("-2:2,-1.5:1.5").unwrap(), vec![[-2.0, 2.0], [-1.5, 1.5]]);
        assert!(parse_bounds("1").is_err());
        assert_eq!(parse_list::<usize>("32, 32").unwrap(), vec![32, 32]);
        assert!(parse_list::<usize>("").unwrap().is_empty());
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"n": 7, "seed": 3}"#).unwrap();
        let flags = EnsembleRunConfig { count: 5, n: 10, sparsity: 0.5, dominance: 1.0, eps: 1e-3, seed: 1, out_dir: "x".into() };
        let cfg = resolve(flags, Some(&path)).unwrap();
        assert_eq!((cfg.count, cfg.n, cfg.seed), (5, 7, 3));
        std::fs::write(&path, "[1]").unwrap();
        let flags = EnsembleRunConfig { count: 5, n: 10, sparsity: 0.5, dominance: 1.0, eps: 1e-3, seed: 1, out_dir: "x".into() };
        assert!(resolve(flags, Some(&path)).is_err());
    }
}
