//! Seeded episode execution: controller construction, offline training of
//! the learning controllers, the closed loop and the per-step records.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tsc_core::classic::{
    static_link_flows, webster_input_for, webster_plan, ActuatedConfig, ActuatedController, MaxPressureConfig, MaxPressureController,
    MaxQueueFirstController,
};
use tsc_core::control::{drive, ControlError, DecisionContext, PlanFollower, SignalController};
use tsc_core::demand::DemandProfile;
use tsc_core::frame::belief::BeliefFilter;
use tsc_core::frame::observe::boundary_links;
use tsc_core::frame::{BoundaryConfig, DesignLevel};
use tsc_core::metrics::{network_episode_metrics, Criterion, EpisodeMetrics, StepMetrics};
use tsc_core::network::Network;
use tsc_core::rho::{RhoConfig, RhoController, TraceEntry};
use tsc_core::rl::policy::{reinforce_train, signal_features, ReinforceConfig, ReinforceController, SIGNAL_FEATURES};
use tsc_core::rl::qlearn::{q_learning_train, CurvePoint, QLearningConfig, QLearningController};
use tsc_core::rl::{state_key, QTable, SimEnvironment, SoftmaxPolicy};
use tsc_core::rng::{stream, StreamRole};
use tsc_core::signal::{ControlMode, CyclePlan, SignalAction};
use tsc_core::sim::{SimConfig, SimState};

use crate::scenario::{ConfigError, ControllerSpec, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl From<ControlError> for RunError {
    fn from(e: ControlError) -> Self {
        RunError::Runtime(e.to_string())
    }
}

/// Everything a run reports besides its per-step files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub scenario: String,
    pub scenario_hash: String,
    pub controller: String,
    pub demand_scale: f64,
    pub seed: u64,
    pub horizon: u64,
    pub steps_run: u64,
    pub metrics: EpisodeMetrics,
    pub entered: f64,
    pub exited: f64,
    pub rejected: f64,
    /// Run directory, relative to the output directory.
    pub dir: PathBuf,
    pub steps_file: PathBuf,
    pub events_file: PathBuf,
    pub trace_file: Option<PathBuf>,
    pub curve_file: Option<PathBuf>,
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// One row of the step CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub t: u64,
    pub intersection: String,
    pub queue: f64,
    pub actual_delay: f64,
    pub stops: f64,
    pub cumulative_delay: f64,
    pub vehicle_count: f64,
    pub cumulative_travel_time: f64,
    pub delta_cumulative_delay: f64,
    pub cost: f64,
}

impl StepRow {
    pub fn new(t: u64, intersection: String, m: &StepMetrics) -> Self {
        Self {
            t,
            intersection,
            queue: m.queue,
            actual_delay: m.actual_delay,
            stops: m.stops,
            cumulative_delay: m.cumulative_delay,
            vehicle_count: m.vehicle_count,
            cumulative_travel_time: m.cumulative_travel_time,
            delta_cumulative_delay: m.delta_cumulative_delay,
            cost: m.cost,
        }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRow {
    pub t: u64,
    pub intersection: String,
    pub phase: usize,
    pub mode: &'static str,
    /// Queued vehicles per lane of the incoming links.
    pub queues: Vec<f64>,
    /// Traffic joining the stop-line queues, per incoming link.
    pub arrivals: Vec<f64>,
    /// Vehicles discharged, per incoming link.
    pub discharges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub intersection: String,
    #[serde(flatten)]
    pub entry: TraceEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub learner: &'static str,
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub epsilon: Option<f64>,
    pub alpha_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: RunResult,
    pub steps: Vec<StepRow>,
    pub events: Vec<EventRow>,
    pub trace: Vec<TraceRow>,
    pub curve: Vec<CurveRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub demand_scale: f64,
    pub events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { demand_scale: 1.0, events: true }
    }
}

#[derive(Debug, Clone)]
enum Trained {
    Q { tables: Vec<QTable>, curve: Vec<CurvePoint> },
    Policy { policies: Vec<SoftmaxPolicy>, curve: Vec<f64> },
}

/// Trained learners keyed by everything their training depends on, so a
/// sweep trains each configuration once.
#[derive(Debug, Default)]
pub struct TrainingCache {
    entries: Mutex<HashMap<String, Arc<Trained>>>,
}

impl TrainingCache {
    fn get_or_train(&self, key: String, train: impl FnOnce() -> Result<Trained, RunError>) -> Result<Arc<Trained>, RunError> {
        if let Some(t) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let t = Arc::new(train()?);
        self.entries.lock().expect("cache lock").insert(key, t.clone());
        Ok(t)
    }
}

fn training_key(s: &Scenario, spec: &ControllerSpec, agents: &[usize]) -> String {
    let json = serde_json::to_vec(&(&s.sim, &s.network, &s.demand, spec, agents)).expect("serialisable");
    hex::encode(Sha256::digest(&json))
}

fn agents_of(s: &Scenario, kind: &str) -> Vec<usize> {
    (0..s.controllers.len()).filter(|&i| s.controllers[i].kind() == kind).collect()
}

/// Agent intersections of one learner kind and their trained parameters.
type TrainedAgents = (Vec<usize>, Arc<Trained>);

fn train(s: &Scenario, kind: &str, cache: &TrainingCache) -> Result<Option<TrainedAgents>, RunError> {
    let agents = agents_of(s, kind);
    let Some(&first) = agents.first() else { return Ok(None) };
    let spec = &s.controllers[first];
    let key = training_key(s, spec, &agents);
    let trained = cache.get_or_train(key, || match spec {
        ControllerSpec::QLearning { level, episodes, episode_steps, gamma, alpha, epsilon, bins, train_demand_scale, training_seed, prior } => {
            let cfg = SimConfig { horizon: *episode_steps, ..s.sim.clone() };
            let boundaries = agents.iter().map(|&i| BoundaryConfig::new(i, *level)).collect();
            let mut env =
                SimEnvironment::new(s.net().clone(), cfg, s.demand_profile(*train_demand_scale), boundaries, Criterion::Queue, *training_seed);
            env.prior = prior.as_ref().map(|p| p.to_belief().expect("validated"));
            let qcfg = QLearningConfig { episodes: *episodes, gamma: *gamma, alpha: *alpha, epsilon: *epsilon, seed: *training_seed };
            let out = q_learning_train(&mut env, |fs| state_key(fs, bins), &qcfg)?;
            Ok(Trained::Q { tables: out.tables, curve: out.curve })
        }
        ControllerSpec::Reinforce { iterations, batch, episode_steps, lr, baseline, queue_scale, train_demand_scale, training_seed } => {
            let cfg = SimConfig { horizon: *episode_steps, ..s.sim.clone() };
            let boundaries = agents.iter().map(|&i| BoundaryConfig::new(i, DesignLevel::L1)).collect();
            let net = s.net().clone();
            let mut env = SimEnvironment::new(net.clone(), cfg, s.demand_profile(*train_demand_scale), boundaries, Criterion::Queue, *training_seed);
            let rcfg = ReinforceConfig { iterations: *iterations, batch: *batch, lr: *lr, baseline: *baseline, seed: *training_seed };
            let out = reinforce_train(&mut env, |fs| signal_features(&net, fs, *queue_scale), SIGNAL_FEATURES, &rcfg)?;
            Ok(Trained::Policy { policies: out.policies, curve: out.curve })
        }
        _ => unreachable!("only learners are trained"),
    })?;
    Ok(Some((agents, trained)))
}

/// A controller of any kind; the MPC stays typed so its trace can be read.
pub enum LabController {
    Rho(RhoController),
    Other(Box<dyn SignalController + Send>),
}

impl SignalController for LabController {
    fn mode(&self) -> ControlMode {
        match self {
            LabController::Rho(c) => c.mode(),
            LabController::Other(c) => c.mode(),
        }
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        match self {
            LabController::Rho(c) => c.decide(ctx),
            LabController::Other(c) => c.decide(ctx),
        }
    }
}

fn plan_for(net: &Network, cfg: &SimConfig, i: usize, plan: CyclePlan) -> Result<CyclePlan, ConfigError> {
    let plan = plan.quantized(cfg.step_s);
    plan.validate_for(net.n_phases(i), net.timing(i), cfg.step_s).map_err(|e| ConfigError::Invalid {
        field: format!("controllers[intersection {}]", net.spec().intersections[i].id),
        message: e.to_string(),
    })?;
    Ok(plan)
}

/// Controllers for one run. Learners must already be trained.
fn build_controllers(
    s: &Scenario,
    demand: &DemandProfile,
    seed: u64,
    learned: &[(Vec<usize>, Arc<Trained>)],
) -> Result<Vec<LabController>, RunError> {
    let net = s.net();
    let field = |i: usize| format!("controllers[intersection {}]", net.spec().intersections[i].id);
    let slot = |i: usize| learned.iter().find_map(|(agents, t)| agents.iter().position(|&a| a == i).map(|k| (k, t.as_ref())));
    let mut out = Vec::with_capacity(s.controllers.len());
    for (i, spec) in s.controllers.iter().enumerate() {
        let c: LabController = match spec {
            ControllerSpec::FixedTime { cycle_s, splits_s, offset_s, phases } => {
                let phases = phases.clone().unwrap_or_else(|| (0..net.n_phases(i)).collect());
                let plan = CyclePlan { phases, splits_s: splits_s.clone(), cycle_s: *cycle_s, offset_s: *offset_s };
                LabController::Other(Box::new(PlanFollower(plan_for(net, &s.sim, i, plan)?)))
            }
            ControllerSpec::Webster { cycle_s } => {
                let flows = static_link_flows(net, demand);
                let w = webster_plan(&webster_input_for(net, i, &flows, *cycle_s))
                    .map_err(|e| ConfigError::Invalid { field: field(i), message: e.to_string() })?;
                LabController::Other(Box::new(PlanFollower(plan_for(net, &s.sim, i, w.plan)?)))
            }
            ControllerSpec::Actuated { gap_s, min_green_s, max_green_s } => {
                let t = net.timing(i);
                let cfg = ActuatedConfig {
                    gap_s: *gap_s,
                    min_green_s: min_green_s.unwrap_or(f64::from(t.min_green) * s.sim.step_s),
                    max_green_s: max_green_s.unwrap_or(f64::from(t.max_green) * s.sim.step_s),
                };
                cfg.validate().map_err(|e| ConfigError::Invalid { field: field(i), message: e.to_string() })?;
                LabController::Other(Box::new(ActuatedController::new(cfg, net)))
            }
            ControllerSpec::MaxPressure { weighted, count_in_transit } => LabController::Other(Box::new(MaxPressureController {
                cfg: MaxPressureConfig { weighted: *weighted, count_in_transit: *count_in_transit },
            })),
            ControllerSpec::MaxQueueFirst => LabController::Other(Box::new(MaxQueueFirstController)),
            ControllerSpec::QLearning { level, bins, prior, .. } => {
                let Some((k, Trained::Q { tables, .. })) = slot(i) else { unreachable!("trained before building") };
                let boundary = BoundaryConfig::new(i, *level);
                let filter = match (level.has_belief(), prior) {
                    (true, Some(p)) => Some(BeliefFilter::new(boundary_links(net, &boundary), &p.to_belief().expect("validated"))),
                    _ => None,
                };
                LabController::Other(Box::new(QLearningController { table: tables[k].clone(), boundary, bins: *bins, filter }))
            }
            ControllerSpec::Reinforce { queue_scale, .. } => {
                let Some((k, Trained::Policy { policies, .. })) = slot(i) else { unreachable!("trained before building") };
                let boundary = BoundaryConfig::new(i, DesignLevel::L1);
                LabController::Other(Box::new(ReinforceController::new(policies[k].clone(), boundary, *queue_scale, seed, 0)))
            }
            ControllerSpec::Rho { horizon, criterion, forecaster, stride, prior } => {
                let cfg = RhoConfig {
                    horizon: *horizon,
                    criterion: *criterion,
                    forecaster: *forecaster,
                    stride: *stride,
                    prior: prior.as_ref().map(|p| p.to_belief().expect("validated")),
                };
                LabController::Rho(RhoController::new(cfg, i, net, demand))
            }
        };
        out.push(c);
    }
    Ok(out)
}

fn fmt_scale(x: f64) -> String {
    format!("{x}")
}

/// Directory of a run relative to the output directory.
pub fn run_dir(controller: &str, scale: f64, seed: u64) -> PathBuf {
    PathBuf::from(controller).join(format!("scale-{}", fmt_scale(scale))).join(format!("seed-{seed}"))
}

fn event_rows(net: &Network, state: &SimState, ev: &tsc_core::sim::StepEvents) -> Vec<EventRow> {
    (0..net.n_intersections())
        .map(|i| {
            let sig = state.signals[i];
            let incoming = net.incoming(i);
            EventRow {
                t: ev.t,
                intersection: net.spec().intersections[i].id.clone(),
                phase: sig.phase,
                mode: sig.mode.as_str(),
                queues: incoming.iter().flat_map(|&l| state.links[l].lanes.iter().map(|ln| ln.mass)).collect(),
                arrivals: incoming.iter().map(|&l| ev.matured[l]).collect(),
                discharges: incoming.iter().map(|&l| net.lanes(l).iter().map(|&m| ev.discharges[m]).sum()).collect(),
            }
        })
        .collect()
}

/// Runs one episode of `s` (already carrying the wanted controllers) with
/// the master seed `seed`. Simulator failures end the run early; the rows
/// recorded so far are kept and the error is reported in the result.
pub fn run_episode(s: &Scenario, seed: u64, opts: &RunOptions, cache: &TrainingCache) -> Result<RunOutput, RunError> {
    let started = Instant::now();
    let net = s.net();
    let cfg = SimConfig { seed, ..s.sim.clone() };
    let demand = s.demand_profile(opts.demand_scale);
    let learned: Vec<_> = ["q_learning", "reinforce"].iter().filter_map(|k| train(s, k, cache).transpose()).collect::<Result<_, _>>()?;
    let mut controllers = build_controllers(s, &demand, seed, &learned)?;
    let modes = controllers.iter().map(SignalController::mode).collect();
    let mut state =
        SimState::new(net, &cfg, &demand, modes, stream(seed, 0, StreamRole::Simulation)).map_err(|e| RunError::Runtime(e.to_string()))?;

    let ids: Vec<String> = net.spec().intersections.iter().map(|x| x.id.clone()).collect();
    let mut steps = Vec::new();
    let mut events = Vec::new();
    let outcome = drive(net, &cfg, &demand, &mut state, &mut controllers, s.coefficients(), |rec| {
        for (i, m) in rec.metrics.iter().enumerate() {
            steps.push(StepRow::new(rec.events.t, ids[i].clone(), m));
        }
        if opts.events {
            events.extend(event_rows(net, rec.state, rec.events));
        }
    });

    let mut trace = Vec::new();
    for (i, c) in controllers.iter().enumerate() {
        if let LabController::Rho(r) = c {
            trace.extend(r.trace.iter().map(|e| TraceRow { intersection: ids[i].clone(), entry: e.clone() }));
        }
    }
    let mut curve = Vec::new();
    for (_, t) in &learned {
        match t.as_ref() {
            Trained::Q { curve: c, .. } => curve.extend(c.iter().map(|p| CurveRow {
                learner: "q_learning",
                episode: p.episode,
                ret: p.ret,
                epsilon: Some(p.epsilon),
                alpha_mean: Some(p.alpha_mean),
            })),
            Trained::Policy { curve: c, .. } => curve.extend(c.iter().enumerate().map(|(k, r)| CurveRow {
                learner: "reinforce",
                episode: k as u64,
                ret: *r,
                epsilon: None,
                alpha_mean: None,
            })),
        }
    }

    let controller = s.controller_label();
    let dir = run_dir(&controller, opts.demand_scale, seed);
    let result = RunResult {
        scenario: s.name.clone(),
        scenario_hash: s.hash(),
        controller,
        demand_scale: opts.demand_scale,
        seed,
        horizon: cfg.horizon,
        steps_run: state.t,
        metrics: network_episode_metrics(state.completed()),
        entered: state.entered,
        exited: state.exited,
        rejected: state.rejected,
        steps_file: dir.join("steps.csv"),
        events_file: dir.join("events.jsonl"),
        trace_file: (!trace.is_empty()).then(|| dir.join("trace.jsonl")),
        curve_file: (!curve.is_empty()).then(|| dir.join("curve.csv")),
        dir,
        error: outcome.err().map(|e| e.to_string()),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { result, steps, events, trace, curve })
}
