//! Scenario files: parsing, defaults and resolution against the network.
//!
//! A scenario is a TOML document. [`ScenarioFile`] mirrors the document;
//! [`Scenario`] is the resolved form with indices in place of ids, every
//! default filled in and the network validated. The scenario hash is the
//! SHA-256 of the resolved form's canonical JSON.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tsc_core::demand::{DemandProfile, SourceDemand};
use tsc_core::frame::{DemandBelief, DesignLevel};
use tsc_core::metrics::{CostCoefficients, Criterion};
use tsc_core::network::presets::{corridor, single_cross, ApproachParams};
use tsc_core::network::{Network, NetworkSpec};
use tsc_core::rho::Forecaster;
use tsc_core::rl::{AlphaSchedule, EpsilonSchedule, KeyBins};
use tsc_core::sim::SimConfig;

/// Bumped whenever a JSON document or CSV layout written by the lab changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub sim: SimConfig,
    pub network: NetworkSection,
    #[serde(default)]
    pub demand: DemandSection,
    pub controllers: Vec<ControllerEntry>,
    /// Named controller configurations a sweep can select by label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub presets: BTreeMap<String, ControllerSpec>,
    #[serde(default)]
    pub costs: CostSection,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub a: f64,
    pub b: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        let c = CostCoefficients::default();
        Self { a: c.a, b: c.b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Approach {
    pub length_m: f64,
    pub speed: f64,
    pub saturation: f64,
    pub capacity: u32,
}

impl Default for Approach {
    fn default() -> Self {
        let p = ApproachParams::default();
        Self { length_m: p.length_m, speed: p.speed, saturation: p.saturation, capacity: p.capacity }
    }
}

impl From<Approach> for ApproachParams {
    fn from(a: Approach) -> Self {
        ApproachParams { length_m: a.length_m, speed: a.speed, saturation: a.saturation, capacity: a.capacity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSection {
    SingleCross {
        #[serde(default)]
        approach: Approach,
        min_green_s: f64,
        max_green_s: f64,
    },
    Corridor {
        intersections: usize,
        #[serde(default)]
        arterial: Approach,
        #[serde(default)]
        side: Approach,
        min_green_s: f64,
        max_green_s: f64,
    },
    /// A network spec in its own TOML file, relative to the scenario file.
    File {
        path: PathBuf,
    },
    Inline(NetworkSpec),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSection {
    /// Constant rate (veh/s) for every entry link without its own source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<f64>,
    #[serde(default)]
    pub sources: Vec<SourceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub link: String,
    #[serde(flatten)]
    pub process: SourceProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum SourceProcess {
    Constant {
        rate: f64,
    },
    /// `(start s, rate veh/s)` breakpoints.
    Schedule {
        points: Vec<(f64, f64)>,
    },
    Regimes {
        rates: Vec<f64>,
        transition: Vec<Vec<f64>>,
        initial: usize,
    },
}

impl SourceProcess {
    fn to_core(&self) -> SourceDemand {
        match self {
            SourceProcess::Constant { rate } => SourceDemand::constant(*rate),
            SourceProcess::Schedule { points } => SourceDemand::Schedule(points.clone()),
            SourceProcess::Regimes { rates, transition, initial } => {
                SourceDemand::Regimes { rates: rates.clone(), transition: transition.clone(), initial: *initial }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEntry {
    /// Intersection ids; all intersections when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at: Option<Vec<String>>,
    #[serde(flatten)]
    pub spec: ControllerSpec,
}

/// Prior of a demand belief; uniform over regimes when `probs` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    pub rates: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

impl PriorSpec {
    pub fn to_belief(&self) -> Result<DemandBelief, String> {
        let r = match &self.probs {
            Some(p) => DemandBelief::new(p.clone(), self.rates.clone(), self.transition.clone()),
            None => DemandBelief::uniform(self.rates.clone(), self.transition.clone()),
        };
        r.map_err(|e| e.to_string())
    }
}

fn d_gap() -> f64 {
    3.0
}
fn d_level() -> DesignLevel {
    DesignLevel::L1
}
fn d_episodes() -> u64 {
    200
}
fn d_episode_steps() -> u64 {
    600
}
fn d_gamma() -> f64 {
    0.95
}
fn d_alpha() -> AlphaSchedule {
    AlphaSchedule::Power { omega: 0.6 }
}
fn d_one() -> f64 {
    1.0
}
fn d_iterations() -> u64 {
    50
}
fn d_batch() -> usize {
    4
}
fn d_lr() -> f64 {
    0.01
}
fn d_true() -> bool {
    true
}
fn d_queue_scale() -> f64 {
    10.0
}
fn d_rho_horizon() -> usize {
    6
}
fn d_criterion() -> Criterion {
    Criterion::Queue
}
fn d_forecaster() -> Forecaster {
    Forecaster::Oracle
}
fn d_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    FixedTime {
        cycle_s: f64,
        splits_s: Vec<f64>,
        #[serde(default)]
        offset_s: f64,
        /// Scheme positions in service order; scheme order when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phases: Option<Vec<usize>>,
    },
    /// Fixed time with Webster's cycle and splits from the mean demand.
    Webster {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cycle_s: Option<f64>,
    },
    Actuated {
        #[serde(default = "d_gap")]
        gap_s: f64,
        /// Scheme min/max green when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_green_s: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_green_s: Option<f64>,
    },
    MaxPressure {
        #[serde(default)]
        weighted: bool,
        #[serde(default)]
        count_in_transit: bool,
    },
    MaxQueueFirst,
    QLearning {
        #[serde(default = "d_level")]
        level: DesignLevel,
        #[serde(default = "d_episodes")]
        episodes: u64,
        #[serde(default = "d_episode_steps")]
        episode_steps: u64,
        #[serde(default = "d_gamma")]
        gamma: f64,
        #[serde(default = "d_alpha")]
        alpha: AlphaSchedule,
        #[serde(default)]
        epsilon: EpsilonSchedule,
        #[serde(default)]
        bins: KeyBins,
        /// Training demand relative to the scenario's base demand.
        #[serde(default = "d_one")]
        train_demand_scale: f64,
        #[serde(default)]
        training_seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior: Option<PriorSpec>,
    },
    Reinforce {
        #[serde(default = "d_iterations")]
        iterations: u64,
        #[serde(default = "d_batch")]
        batch: usize,
        #[serde(default = "d_episode_steps")]
        episode_steps: u64,
        #[serde(default = "d_lr")]
        lr: f64,
        #[serde(default = "d_true")]
        baseline: bool,
        #[serde(default = "d_queue_scale")]
        queue_scale: f64,
        #[serde(default = "d_one")]
        train_demand_scale: f64,
        #[serde(default)]
        training_seed: u64,
    },
    Rho {
        #[serde(default = "d_rho_horizon")]
        horizon: usize,
        #[serde(default = "d_criterion")]
        criterion: Criterion,
        #[serde(default = "d_forecaster")]
        forecaster: Forecaster,
        #[serde(default = "d_stride")]
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior: Option<PriorSpec>,
    },
}

pub const CONTROLLER_KINDS: [&str; 8] = ["fixed_time", "webster", "actuated", "max_pressure", "max_queue_first", "q_learning", "reinforce", "rho"];

impl ControllerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerSpec::FixedTime { .. } => "fixed_time",
            ControllerSpec::Webster { .. } => "webster",
            ControllerSpec::Actuated { .. } => "actuated",
            ControllerSpec::MaxPressure { .. } => "max_pressure",
            ControllerSpec::MaxQueueFirst => "max_queue_first",
            ControllerSpec::QLearning { .. } => "q_learning",
            ControllerSpec::Reinforce { .. } => "reinforce",
            ControllerSpec::Rho { .. } => "rho",
        }
    }

    /// The kind with every parameter at its default. Fixed time has no
    /// sensible default plan and yields `None`.
    pub fn default_for(kind: &str) -> Option<Self> {
        if kind == "fixed_time" {
            return None;
        }
        let doc = format!("kind = \"{kind}\"");
        toml::from_str(&doc).ok()
    }
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub sim: SimConfig,
    pub network: NetworkSpec,
    /// `(entry link, process)` per demand source.
    pub demand: Vec<(usize, SourceDemand)>,
    /// One controller per intersection.
    pub controllers: Vec<ControllerSpec>,
    pub presets: BTreeMap<String, ControllerSpec>,
    pub costs: CostSection,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
    #[serde(skip)]
    net: Option<Network>,
}

impl Scenario {
    pub fn net(&self) -> &Network {
        self.net.as_ref().expect("resolved scenarios carry their network")
    }

    pub fn demand_profile(&self, scale: f64) -> DemandProfile {
        DemandProfile::new(self.net(), self.demand.clone()).expect("validated at resolution").scaled(scale)
    }

    pub fn coefficients(&self) -> CostCoefficients {
        CostCoefficients { a: self.costs.a, b: self.costs.b }
    }

    /// SHA-256 of the canonical JSON of the resolved scenario.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// The same scenario with every intersection driven by `spec`.
    pub fn with_controller(&self, spec: &ControllerSpec) -> Result<Scenario, ConfigError> {
        let mut s = self.clone();
        s.controllers = vec![spec.clone(); self.net().n_intersections()];
        check_controllers(&s)?;
        Ok(s)
    }

    /// A label for the controller assignment: the kind when uniform,
    /// kinds joined with `+` otherwise.
    pub fn controller_label(&self) -> String {
        let mut kinds: Vec<&str> = self.controllers.iter().map(ControllerSpec::kind).collect();
        kinds.dedup();
        kinds.join("+")
    }

    /// A sweep axis entry: a preset label or a controller kind with defaults.
    pub fn controller_by_name(&self, name: &str) -> Result<ControllerSpec, ConfigError> {
        if let Some(s) = self.presets.get(name) {
            return Ok(s.clone());
        }
        if !CONTROLLER_KINDS.contains(&name) {
            return Err(invalid("controllers", format!("'{name}' is neither a preset nor a controller kind")));
        }
        ControllerSpec::default_for(name).ok_or_else(|| invalid("controllers", format!("'{name}' needs parameters; define it under [presets]")))
    }
}

pub fn parse_str(text: &str, origin: &str) -> Result<ScenarioFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let file = parse_str(&text, &path.display().to_string())?;
    resolve(&file, path.parent())
}

fn network_spec(section: &NetworkSection, base: Option<&Path>) -> Result<NetworkSpec, ConfigError> {
    Ok(match section {
        NetworkSection::SingleCross { approach, min_green_s, max_green_s } => single_cross((*approach).into(), *min_green_s, *max_green_s),
        NetworkSection::Corridor { intersections, arterial, side, min_green_s, max_green_s } => {
            if *intersections == 0 {
                return Err(invalid("network.intersections", "must be at least 1"));
            }
            corridor(*intersections, (*arterial).into(), (*side).into(), *min_green_s, *max_green_s)
        }
        NetworkSection::File { path } => {
            let full = base.map_or_else(|| path.clone(), |b| b.join(path));
            let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io { path: full.clone(), source })?;
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: full.display().to_string(), message: e.to_string() })?
        }
        NetworkSection::Inline(spec) => spec.clone(),
    })
}

pub fn resolve(file: &ScenarioFile, base: Option<&Path>) -> Result<Scenario, ConfigError> {
    file.sim.validate().map_err(|e| invalid("sim", e))?;
    let spec = network_spec(&file.network, base)?;
    let net = Network::new(spec.clone(), &file.sim).map_err(|e| invalid("network", e))?;
    if file.seeds.is_empty() {
        return Err(invalid("seeds", "must list at least one seed"));
    }

    let mut demand: Vec<(usize, SourceDemand)> = Vec::new();
    for (k, src) in file.demand.sources.iter().enumerate() {
        let field = format!("demand.sources[{k}].link");
        let l = net.link_index(&src.link).ok_or_else(|| invalid(&field, format!("unknown link '{}'", src.link)))?;
        if demand.iter().any(|(m, _)| *m == l) {
            return Err(invalid(field, format!("link '{}' has two sources", src.link)));
        }
        demand.push((l, src.process.to_core()));
    }
    if let Some(rate) = file.demand.uniform {
        for &l in net.entry_links() {
            if !demand.iter().any(|(m, _)| *m == l) {
                demand.push((l, SourceDemand::constant(rate)));
            }
        }
    }
    demand.sort_by_key(|(l, _)| *l);
    DemandProfile::new(&net, demand.clone()).map_err(|e| invalid("demand", e))?;

    let n = net.n_intersections();
    let mut assigned: Vec<Option<ControllerSpec>> = vec![None; n];
    for (k, entry) in file.controllers.iter().enumerate() {
        match &entry.at {
            None => assigned.iter_mut().for_each(|a| *a = Some(entry.spec.clone())),
            Some(ids) => {
                for (j, id) in ids.iter().enumerate() {
                    let i = net
                        .intersection_index(id)
                        .ok_or_else(|| invalid(format!("controllers[{k}].at[{j}]"), format!("unknown intersection '{id}'")))?;
                    assigned[i] = Some(entry.spec.clone());
                }
            }
        }
    }
    let controllers = assigned
        .into_iter()
        .enumerate()
        .map(|(i, a)| a.ok_or_else(|| invalid("controllers", format!("intersection '{}' has no controller", net.spec().intersections[i].id))))
        .collect::<Result<Vec<_>, _>>()?;

    let scenario = Scenario {
        name: file.name.clone(),
        sim: file.sim.clone(),
        network: spec,
        demand,
        controllers,
        presets: file.presets.clone(),
        costs: file.costs,
        seeds: file.seeds.clone(),
        out_dir: file.out_dir.clone(),
        net: Some(net),
    };
    check_controllers(&scenario)?;
    for (label, p) in &scenario.presets {
        check_spec(p, &format!("presets.{label}"))?;
    }
    Ok(scenario)
}

fn check_controllers(s: &Scenario) -> Result<(), ConfigError> {
    for (i, c) in s.controllers.iter().enumerate() {
        check_spec(c, &format!("controllers[intersection {}]", s.network.intersections[i].id))?;
    }
    for kind in ["q_learning", "reinforce"] {
        let mut specs = s.controllers.iter().filter(|c| c.kind() == kind);
        if let Some(first) = specs.next() {
            if specs.any(|c| c != first) {
                return Err(invalid("controllers", format!("all {kind} intersections must share one configuration")));
            }
        }
    }
    Ok(())
}

fn check_spec(c: &ControllerSpec, field: &str) -> Result<(), ConfigError> {
    let positive = |x: f64| x.is_finite() && x > 0.0;
    match c {
        ControllerSpec::FixedTime { cycle_s, splits_s, .. } => {
            if !positive(*cycle_s) || splits_s.is_empty() {
                return Err(invalid(field, "fixed_time needs a positive cycle and splits"));
            }
        }
        ControllerSpec::Webster { cycle_s: Some(c) } if !positive(*c) => return Err(invalid(field, "cycle must be positive")),
        ControllerSpec::Actuated { gap_s, .. } if !positive(*gap_s) => return Err(invalid(field, "gap must be positive")),
        ControllerSpec::QLearning { level, gamma, prior, episode_steps, train_demand_scale, .. } => {
            if !(0.0..1.0).contains(gamma) || *episode_steps == 0 || !(*train_demand_scale >= 0.0) {
                return Err(invalid(field, "q_learning needs gamma in [0, 1), episode steps and a non-negative demand scale"));
            }
            if level.has_belief() && prior.is_none() {
                return Err(invalid(field, "level l4 needs a prior"));
            }
            if let Some(p) = prior {
                p.to_belief().map_err(|e| invalid(format!("{field}.prior"), e))?;
            }
        }
        ControllerSpec::Reinforce { batch, episode_steps, queue_scale, .. } => {
            if *batch == 0 || *episode_steps == 0 || !positive(*queue_scale) {
                return Err(invalid(field, "reinforce needs a batch, episode steps and a positive queue scale"));
            }
        }
        ControllerSpec::Rho { horizon, criterion, forecaster, stride, prior } => {
            let mut cfg = tsc_core::rho::RhoConfig::new(*horizon, *forecaster);
            cfg.criterion = *criterion;
            cfg.stride = *stride;
            if let Some(p) = prior {
                cfg.prior = Some(p.to_belief().map_err(|e| invalid(format!("{field}.prior"), e))?);
            }
            cfg.validate().map_err(|e| invalid(field, e))?;
        }
        _ => {}
    }
    Ok(())
}
