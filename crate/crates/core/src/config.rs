//! Scenario files: TOML documents describing two groups, a dynamics model and
//! one experiment.
//!
//! Parsing happens in two stages. The raw structs mirror the file layout;
//! [`ScenarioConfig::from_toml`] then checks every field and cross-field
//! constraint and reports failures with a dotted field path such as
//! `group_a.g1`.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::dist::{DistKind, SubgroupDistribution};
use crate::dynamics::{DynamicsKind, DynamicsModel, RetentionFn};
use crate::error::{Error, Result};
use crate::fairsolve::FairnessCriterion;
use crate::horizon::ConvergenceSpec;
use crate::numeric::linspace;
use crate::popmodel::{GroupSpec, PopulationState};

const LABEL_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    criterion: Option<String>,
    criteria: Option<Vec<String>>,
    group_a: RawGroup,
    group_b: RawGroup,
    dynamics: RawDynamics,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    horizon: RawHorizon,
    experiment: RawExperiment,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    g0: f64,
    g1: f64,
    negative: RawDist,
    positive: RawDist,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDist {
    kind: String,
    lo: f64,
    hi: f64,
    mu: Option<f64>,
    sigma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDynamics {
    #[serde(default = "default_dynamics_kind")]
    kind: String,
    retention: Option<String>,
    retention_table: Option<Vec<[f64; 2]>>,
    beta_a: Option<f64>,
    beta_b: Option<f64>,
    arrival_mean_a: Option<f64>,
    arrival_mean_b: Option<f64>,
    seed: Option<u64>,
}

fn default_dynamics_kind() -> String {
    "accuracy".into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    mode: Option<String>,
    n_a: Option<f64>,
    n_b: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHorizon {
    max_steps: Option<usize>,
    eps: Option<f64>,
    window: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    from: f64,
    to: f64,
    points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    kind: String,
    ratio: Option<f64>,
    beta_a_values: Option<Vec<f64>>,
    beta_b_values: Option<Vec<f64>>,
    beta_a_range: Option<RawRange>,
    beta_b_range: Option<RawRange>,
    burn_in: Option<usize>,
    seed: Option<u64>,
    grid_points: Option<usize>,
    margin: Option<f64>,
    output_dir: Option<String>,
}

/// Starting population of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    /// Each group starts with one step's worth of arrivals.
    NearEmpty,
    Counts { n_a: f64, n_b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    /// One trajectory per criterion.
    Simulate,
    /// Final group share over a grid of arrival rates (row-major in `beta_a`).
    Sweep { grid: Vec<(f64, f64)> },
    /// Decision-table pairs a greedy run passes through (uniform groups only).
    Visited,
    /// Single decision at a fixed population ratio `N_a / N_b`.
    OneShot { ratio: f64 },
    /// Long-run loss against final group share for Simple, EqLos and MinMax.
    Tradeoff,
    /// Population-optimal against sample-learned decisions.
    Quality { burn_in: usize, seed: u64 },
    /// Search for a constant decision beating the greedy long-run loss.
    Witness { grid_points: usize, margin: f64 },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Sweep { .. } => "sweep",
            Experiment::Visited => "visited",
            Experiment::OneShot { .. } => "oneshot",
            Experiment::Tradeoff => "tradeoff",
            Experiment::Quality { .. } => "quality",
            Experiment::Witness { .. } => "witness",
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub group_a: GroupSpec,
    pub group_b: GroupSpec,
    pub criteria: Vec<FairnessCriterion>,
    pub model: DynamicsModel,
    pub init: InitSpec,
    pub conv: ConvergenceSpec,
    pub experiment: Experiment,
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.name.is_empty() {
            cfg.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scenario".into());
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .map(|s| format!("<toml at byte {}>", s.start))
                .unwrap_or_else(|| "<toml>".into());
            Error::config(path, message)
        })?;
        let group_a = group(&raw.group_a, "group_a")?;
        let group_b = group(&raw.group_b, "group_b")?;
        let criteria = criteria(raw.criterion.as_deref(), raw.criteria.as_deref())?;
        let model = dynamics(&raw.dynamics)?;
        let init = init(&raw.init)?;
        let conv = horizon(&raw.horizon)?;
        let experiment = experiment(&raw.experiment)?;

        if experiment == Experiment::Visited {
            if !(group_a.is_uniform() && group_b.is_uniform()) {
                return Err(Error::config(
                    "experiment.kind",
                    "visited decisions need uniform distributions in both groups",
                ));
            }
            if let Some(c) = criteria.iter().find(|c| !c.has_constraint_map()) {
                return Err(Error::config("criteria", format!("{c} has no decision table")));
            }
        }
        if let Experiment::Witness { .. } = experiment {
            if let Some(c) = criteria.iter().find(|c| !c.has_constraint_map()) {
                return Err(Error::config("criteria", format!("{c} has no constraint curve to search")));
            }
        }
        if model.kind == DynamicsKind::Subgroup && matches!(init, InitSpec::Counts { .. }) {
            return Err(Error::config("init.mode", "subgroup dynamics start from near_empty"));
        }
        Ok(Self {
            name: raw.name.unwrap_or_default(),
            group_a,
            group_b,
            criteria,
            model,
            init,
            conv,
            output_dir: raw.experiment.output_dir.map(PathBuf::from),
            experiment,
        })
    }

    /// Initial state for a run of `model` on this scenario's groups.
    pub fn initial_state(&self, model: &DynamicsModel) -> Result<PopulationState> {
        match self.init {
            InitSpec::NearEmpty => model.near_empty_state(&self.group_a, &self.group_b),
            InitSpec::Counts { n_a, n_b } => PopulationState::new(n_a, n_b),
        }
    }

    /// Replaces every seed in the scenario.
    pub fn override_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        if let Experiment::Quality { seed: s, .. } = &mut self.experiment {
            *s = seed;
        }
    }
}

fn finite(path: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::config(path, format!("must be finite, got {x}")))
    }
}

fn nonnegative(path: &str, x: f64) -> Result<f64> {
    if finite(path, x)? >= 0.0 {
        Ok(x)
    } else {
        Err(Error::config(path, format!("must be nonnegative, got {x}")))
    }
}

fn dist(raw: &RawDist, path: &str) -> Result<SubgroupDistribution> {
    let lo = finite(&format!("{path}.lo"), raw.lo)?;
    let hi = finite(&format!("{path}.hi"), raw.hi)?;
    if lo >= hi {
        return Err(Error::config(format!("{path}.hi"), format!("must exceed lo ({lo}), got {hi}")));
    }
    let kind = match raw.kind.as_str() {
        "uniform" => {
            for (field, v) in [("mu", raw.mu), ("sigma", raw.sigma)] {
                if v.is_some() {
                    return Err(Error::config(format!("{path}.{field}"), "not used by a uniform distribution"));
                }
            }
            DistKind::Uniform
        }
        "truncated_normal" => {
            let mu = raw
                .mu
                .ok_or_else(|| Error::config(format!("{path}.mu"), "required for truncated_normal"))?;
            let sigma = raw
                .sigma
                .ok_or_else(|| Error::config(format!("{path}.sigma"), "required for truncated_normal"))?;
            finite(&format!("{path}.mu"), mu)?;
            if !(finite(&format!("{path}.sigma"), sigma)? > 0.0) {
                return Err(Error::config(format!("{path}.sigma"), format!("must be positive, got {sigma}")));
            }
            DistKind::TruncatedNormal { mu, sigma }
        }
        other => {
            return Err(Error::config(
                format!("{path}.kind"),
                format!("unknown distribution '{other}' (expected uniform or truncated_normal)"),
            ))
        }
    };
    SubgroupDistribution::new(kind, lo, hi).map_err(|e| Error::config(path, e.to_string()))
}

fn group(raw: &RawGroup, path: &str) -> Result<GroupSpec> {
    for (field, v) in [("g0", raw.g0), ("g1", raw.g1)] {
        let p = format!("{path}.{field}");
        if !(0.0..=1.0).contains(&finite(&p, v)?) {
            return Err(Error::config(p, format!("must lie in [0, 1], got {v}")));
        }
    }
    if (raw.g0 + raw.g1 - 1.0).abs() > LABEL_SUM_TOL {
        return Err(Error::config(
            format!("{path}.g1"),
            format!("g0 + g1 must equal 1, got {} + {} = {}", raw.g0, raw.g1, raw.g0 + raw.g1),
        ));
    }
    let f0 = dist(&raw.negative, &format!("{path}.negative"))?;
    let f1 = dist(&raw.positive, &format!("{path}.positive"))?;
    // Renormalize so the sum is exact.
    GroupSpec::new(raw.g0, 1.0 - raw.g0, f0, f1).map_err(|e| Error::config(path, e.to_string()))
}

fn criteria(single: Option<&str>, list: Option<&[String]>) -> Result<Vec<FairnessCriterion>> {
    let parse = |path: String, s: &str| s.parse::<FairnessCriterion>().map_err(|e| Error::config(path, e.to_string()));
    match (single, list) {
        (Some(_), Some(_)) => Err(Error::config("criteria", "give either criterion or criteria, not both")),
        (Some(s), None) => Ok(vec![parse("criterion".into(), s)?]),
        (None, Some([])) => Err(Error::config("criteria", "list is empty")),
        (None, Some(list)) => list
            .iter()
            .enumerate()
            .map(|(i, s)| parse(format!("criteria[{i}]"), s))
            .collect(),
        (None, None) => Err(Error::config("criterion", "missing; give criterion or criteria")),
    }
}

fn dynamics(raw: &RawDynamics) -> Result<DynamicsModel> {
    let kind = match raw.kind.as_str() {
        "accuracy" => DynamicsKind::Accuracy,
        "arrival_coupled" => DynamicsKind::ArrivalCoupled,
        "fn_driven" => DynamicsKind::FnDriven,
        "subgroup" => DynamicsKind::Subgroup,
        "random_arrival" => DynamicsKind::RandomArrival,
        other => {
            return Err(Error::config(
                "dynamics.kind",
                format!(
                    "unknown dynamics '{other}' (expected accuracy, arrival_coupled, fn_driven, subgroup or random_arrival)"
                ),
            ))
        }
    };
    let retention = match (&raw.retention, &raw.retention_table) {
        (Some(_), Some(_)) => {
            return Err(Error::config("dynamics.retention_table", "give either retention or retention_table"))
        }
        (Some(name), None) => match name.as_str() {
            "one_minus_x" => RetentionFn::OneMinusX,
            "one_minus_x_squared" => RetentionFn::OneMinusXSquared,
            other => {
                return Err(Error::config(
                    "dynamics.retention",
                    format!("unknown preset '{other}' (expected one_minus_x or one_minus_x_squared)"),
                ))
            }
        },
        (None, Some(knots)) => RetentionFn::table(knots.iter().map(|k| (k[0], k[1])).collect())
            .map_err(|e| Error::config("dynamics.retention_table", e.to_string()))?,
        (None, None) => return Err(Error::config("dynamics.retention", "missing")),
    };
    let required = |field: &str, v: Option<f64>| -> Result<f64> {
        let path = format!("dynamics.{field}");
        nonnegative(&path, v.ok_or_else(|| Error::config(&path, "missing"))?)
    };
    let model = if kind == DynamicsKind::RandomArrival {
        let mean_a = required("arrival_mean_a", raw.arrival_mean_a)?;
        let mean_b = required("arrival_mean_b", raw.arrival_mean_b)?;
        DynamicsModel::random_arrivals(retention, mean_a, mean_b, raw.seed.unwrap_or(0))
    } else {
        for (field, v) in [("arrival_mean_a", raw.arrival_mean_a), ("arrival_mean_b", raw.arrival_mean_b)] {
            if v.is_some() {
                return Err(Error::config(format!("dynamics.{field}"), "only used by random_arrival dynamics"));
            }
        }
        let beta_a = required("beta_a", raw.beta_a)?;
        let beta_b = required("beta_b", raw.beta_b)?;
        DynamicsModel::new(kind, retention, beta_a, beta_b).map(|mut m| {
            m.seed = raw.seed.unwrap_or(0);
            m
        })
    };
    model.map_err(|e| Error::config("dynamics", e.to_string()))
}

fn init(raw: &RawInit) -> Result<InitSpec> {
    match raw.mode.as_deref().unwrap_or("near_empty") {
        "near_empty" => {
            if raw.n_a.is_some() || raw.n_b.is_some() {
                return Err(Error::config("init.mode", "counts are only read with mode = \"counts\""));
            }
            Ok(InitSpec::NearEmpty)
        }
        "counts" => {
            let n_a = nonnegative("init.n_a", raw.n_a.ok_or_else(|| Error::config("init.n_a", "missing"))?)?;
            let n_b = nonnegative("init.n_b", raw.n_b.ok_or_else(|| Error::config("init.n_b", "missing"))?)?;
            Ok(InitSpec::Counts { n_a, n_b })
        }
        other => Err(Error::config(
            "init.mode",
            format!("unknown mode '{other}' (expected near_empty or counts)"),
        )),
    }
}

fn horizon(raw: &RawHorizon) -> Result<ConvergenceSpec> {
    let d = ConvergenceSpec::default();
    let spec = ConvergenceSpec {
        eps: raw.eps.unwrap_or(d.eps),
        window: raw.window.unwrap_or(d.window),
        max_steps: raw.max_steps.unwrap_or(d.max_steps),
    };
    if !(spec.eps.is_finite() && spec.eps > 0.0) {
        return Err(Error::config("horizon.eps", format!("must be positive, got {}", spec.eps)));
    }
    if spec.window == 0 {
        return Err(Error::config("horizon.window", "must be at least 1"));
    }
    if spec.max_steps == 0 {
        return Err(Error::config("horizon.max_steps", "must be at least 1"));
    }
    Ok(spec)
}

fn beta_axis(values: &Option<Vec<f64>>, range: &Option<RawRange>, axis: &str) -> Result<Vec<f64>> {
    let values = match (values, range) {
        (Some(_), Some(_)) => {
            return Err(Error::config(
                format!("experiment.beta_{axis}_range"),
                format!("give either beta_{axis}_values or beta_{axis}_range"),
            ))
        }
        (Some(v), None) => v.clone(),
        (None, Some(r)) => {
            let path = format!("experiment.beta_{axis}_range");
            if r.points == 0 {
                return Err(Error::config(format!("{path}.points"), "must be at least 1"));
            }
            if r.points == 1 {
                vec![r.from]
            } else {
                linspace(finite(&format!("{path}.from"), r.from)?, finite(&format!("{path}.to"), r.to)?, r.points)
            }
        }
        (None, None) => {
            return Err(Error::config(
                format!("experiment.beta_{axis}_values"),
                "sweeps need a value list or a range for each group",
            ))
        }
    };
    if values.is_empty() {
        return Err(Error::config(format!("experiment.beta_{axis}_values"), "list is empty"));
    }
    for (i, v) in values.iter().enumerate() {
        nonnegative(&format!("experiment.beta_{axis}_values[{i}]"), *v)?;
    }
    Ok(values)
}

fn experiment(raw: &RawExperiment) -> Result<Experiment> {
    let kind = raw.kind.as_str();
    let sweep_fields = raw.beta_a_values.is_some()
        || raw.beta_b_values.is_some()
        || raw.beta_a_range.is_some()
        || raw.beta_b_range.is_some();
    if sweep_fields && kind != "sweep" {
        return Err(Error::config("experiment.kind", "arrival grids are only used by sweep experiments"));
    }
    Ok(match kind {
        "simulate" => Experiment::Simulate,
        "visited" => Experiment::Visited,
        "tradeoff" => Experiment::Tradeoff,
        "sweep" => {
            let a = beta_axis(&raw.beta_a_values, &raw.beta_a_range, "a")?;
            let b = beta_axis(&raw.beta_b_values, &raw.beta_b_range, "b")?;
            Experiment::Sweep {
                grid: a.iter().flat_map(|&x| b.iter().map(move |&y| (x, y))).collect(),
            }
        }
        "oneshot" => {
            let ratio = raw
                .ratio
                .ok_or_else(|| Error::config("experiment.ratio", "required for oneshot"))?;
            if !(ratio.is_finite() && ratio > 0.0) {
                return Err(Error::config("experiment.ratio", format!("must be positive, got {ratio}")));
            }
            Experiment::OneShot { ratio }
        }
        "quality" => Experiment::Quality {
            burn_in: raw.burn_in.unwrap_or(0),
            seed: raw.seed.unwrap_or(0),
        },
        "witness" => {
            let grid_points = raw.grid_points.unwrap_or(201);
            if grid_points < 2 {
                return Err(Error::config("experiment.grid_points", "must be at least 2"));
            }
            let margin = nonnegative("experiment.margin", raw.margin.unwrap_or(1e-6))?;
            Experiment::Witness { grid_points, margin }
        }
        other => {
            return Err(Error::config(
                "experiment.kind",
                format!("unknown experiment '{other}' (expected simulate, sweep, visited, oneshot, tradeoff, quality or witness)"),
            ))
        }
    })
}
