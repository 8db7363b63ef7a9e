//! Discrete-time mesoscopic queue-transmission simulator.
//!
//! Every link is a set of point queues, one lane per outgoing movement, fed
//! by an in-transit buffer that delays vehicles by the link's free-flow
//! traversal time. A movement whose phase is green discharges
//! `min(queue, saturation·τ, downstream residual capacity)` each step, which
//! is enough to reproduce spill-back.
//!
//! One call to [`step`] runs, in order:
//! 1. signal actions (interlock, min/max green),
//! 2. boundary arrivals into entry links,
//! 3. matured in-transit traffic joining the queues,
//! 4. green discharge,
//! 5. per-vehicle delay/stop tracking,
//! 6. the clock tick.
//!
//! Two flow models share this code. [`FlowModel::Vehicles`] moves whole,
//! individually tracked vehicles (discharge floors with a per-movement
//! remainder so the long-run rate equals the saturation rate).
//! [`FlowModel::Fluid`] moves fractional masses and keeps no per-vehicle
//! records; rolling-horizon controllers use it as their internal model.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::DemandProfile;
use crate::demand::DemandState;
use crate::math;
use crate::network::Network;
use crate::rng::{self, SimRng};
use crate::signal::{apply_cycle_plan, apply_signal_action, ControlMode, SignalAction, SignalError, SignalMode, SignalState, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowModel {
    Vehicles,
    Fluid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    /// Poisson counts per step.
    Poisson,
    /// Expected counts: fractional in the fluid model, whole vehicles with
    /// carried remainders in the vehicle model.
    Expected,
}

/// What happens to boundary arrivals that find the entry link full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockedArrivals {
    /// Wait outside the network and enter when space frees up.
    Hold,
    /// Are turned away and counted as rejected.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step length τ in seconds.
    pub step_s: f64,
    /// Speed at or below which a vehicle counts as stopped (m/s).
    pub stop_speed: f64,
    pub default_yellow_s: f64,
    pub default_all_red_s: f64,
    /// Episode length in steps.
    pub horizon: u64,
    pub seed: u64,
    pub flow: FlowModel,
    pub arrivals: ArrivalProcess,
    pub blocked: BlockedArrivals,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_s: 1.0,
            stop_speed: 2.0,
            default_yellow_s: 3.0,
            default_all_red_s: 2.0,
            horizon: 3600,
            seed: 0,
            flow: FlowModel::Vehicles,
            arrivals: ArrivalProcess::Poisson,
            blocked: BlockedArrivals::Hold,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.step_s > 0.0 && self.step_s.is_finite()) {
            return Err(SimError::Config("step length must be positive"));
        }
        if !(self.stop_speed > 0.0) {
            return Err(SimError::Config("stop-speed threshold must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("expected {expected} arrival counts, got {got}")]
    ArrivalCount { expected: usize, got: usize },
    #[error("movements {0} and {1} would be green together")]
    ConflictViolation(usize, usize),
    #[error("intersection {intersection}: {source}")]
    Signal { intersection: usize, source: SignalError },
}

/// Per-vehicle tracker. Times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: u32,
    pub entry_step: u64,
    pub exit_step: Option<u64>,
    /// Stop time over the whole trip.
    pub delay_s: f64,
    pub travel_time_s: f64,
    pub stops: u32,
    /// Speed proxy during the last step: 0 when queued, v* when moving.
    pub speed: f64,
    /// Stops taken during the last step (0 or 1).
    pub stops_last_step: u32,
    /// Stop time since entering the current link; reset at the stop line.
    pub link_delay_s: f64,
    /// Time since entering the current link; reset at the stop line.
    pub link_time_s: f64,
    pub link: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Lane {
    pub mass: f64,
    pub vehicles: VecDeque<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub due: u64,
    pub mass: f64,
    pub vehicles: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkState {
    pub lanes: Vec<Lane>,
    pub transit: VecDeque<Batch>,
    /// Traffic that entered this link during the last step.
    pub inflow: f64,
}

impl LinkState {
    pub fn queue(&self) -> f64 {
        self.lanes.iter().map(|l| l.mass).sum()
    }

    pub fn in_transit(&self) -> f64 {
        self.transit.iter().map(|b| b.mass).sum()
    }

    pub fn occupancy(&self) -> f64 {
        self.queue() + self.in_transit()
    }
}

/// Dynamic world state. Cloning gives an independent copy (controllers use
/// this to roll out what-if futures).
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: u64,
    pub flow: FlowModel,
    pub links: Vec<LinkState>,
    pub signals: Vec<SignalState>,
    pub control: Vec<ControlMode>,
    /// Fractional discharge carried per movement (vehicle model only).
    pub remainder: Vec<f64>,
    /// Every vehicle that ever entered, indexed by id.
    pub vehicles: Vec<VehicleRecord>,
    pub entered: f64,
    pub exited: f64,
    pub rejected: f64,
    /// Entry link of each demand source.
    pub source_links: Vec<usize>,
    /// Arrivals waiting outside each demand source's entry link.
    pub backlog: Vec<f64>,
    pub demand: DemandState,
    pub rng: SimRng,
}

/// What happened during one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepEvents {
    pub t: u64,
    pub signals: Vec<SignalState>,
    pub transitions: Vec<Transition>,
    /// Arrivals generated per demand source.
    pub generated: Vec<f64>,
    /// Arrivals admitted into each source's entry link.
    pub admitted: Vec<f64>,
    /// Traffic reaching the end of each link (joining its queues, or leaving
    /// the network for exit links).
    pub matured: Vec<f64>,
    /// Vehicles discharged per movement.
    pub discharges: Vec<f64>,
    pub exits: f64,
}

/// Where this step's boundary arrivals come from.
#[derive(Debug, Clone, Copy)]
pub enum Arrivals<'a> {
    /// Draw from the demand profile according to [`SimConfig::arrivals`].
    FromProfile(&'a DemandProfile),
    /// Use these counts, one per demand source.
    Given(&'a [f64]),
}

impl SimState {
    pub fn new(net: &Network, cfg: &SimConfig, demand: &DemandProfile, control: Vec<ControlMode>, rng: SimRng) -> Result<Self, SimError> {
        cfg.validate()?;
        if control.len() != net.n_intersections() {
            return Err(SimError::ActionCount { expected: net.n_intersections(), got: control.len() });
        }
        for (i, m) in control.iter().enumerate() {
            if let ControlMode::Cycle(plan) = m {
                plan.validate_for(net.n_phases(i), net.timing(i), cfg.step_s).map_err(|source| SimError::Signal { intersection: i, source })?;
            }
        }
        let links = (0..net.n_links()).map(|l| LinkState { lanes: alloc::vec![Lane::default(); net.lanes(l).len()], ..Default::default() }).collect();
        Ok(Self {
            t: 0,
            flow: cfg.flow,
            links,
            signals: alloc::vec![SignalState::initial(); net.n_intersections()],
            control,
            remainder: alloc::vec![0.0; net.n_movements()],
            vehicles: Vec::new(),
            entered: 0.0,
            exited: 0.0,
            rejected: 0.0,
            source_links: demand.sources().iter().map(|(l, _)| *l).collect(),
            backlog: alloc::vec![0.0; demand.sources().len()],
            demand: demand.initial_state(),
            rng,
        })
    }

    /// Puts `count` vehicles at the tail of movement `m`'s lane, as if they
    /// had just arrived at the stop line. Counts towards `entered`.
    pub fn load_queue(&mut self, net: &Network, m: usize, count: f64) {
        let link = net.movement(m).in_link;
        let lane = net.lane_of(m);
        self.entered += count;
        self.links[link].lanes[lane].mass += count;
        if self.flow == FlowModel::Vehicles {
            for _ in 0..(count as u32) {
                let id = self.spawn(Some(link));
                self.vehicles[id as usize].speed = 0.0;
                self.links[link].lanes[lane].vehicles.push_back(id);
            }
        }
    }

    fn spawn(&mut self, link: Option<usize>) -> u32 {
        let id = self.vehicles.len() as u32;
        self.vehicles.push(VehicleRecord {
            id,
            entry_step: self.t,
            exit_step: None,
            delay_s: 0.0,
            travel_time_s: 0.0,
            stops: 0,
            speed: f64::INFINITY,
            stops_last_step: 0,
            link_delay_s: 0.0,
            link_time_s: 0.0,
            link,
        });
        id
    }

    /// Vehicles (or mass) currently inside the network.
    pub fn present(&self) -> f64 {
        self.links.iter().map(LinkState::occupancy).sum()
    }

    pub fn queue(&self, link: usize) -> f64 {
        self.links[link].queue()
    }

    pub fn completed(&self) -> impl Iterator<Item = &VehicleRecord> {
        self.vehicles.iter().filter(|v| v.exit_step.is_some())
    }

    /// Copy of this state for the fluid model: same queues, signals and
    /// clock, no vehicle identities.
    pub fn to_fluid(&self) -> SimState {
        let links = self
            .links
            .iter()
            .map(|l| LinkState {
                lanes: l.lanes.iter().map(|ln| Lane { mass: ln.mass, vehicles: VecDeque::new() }).collect(),
                transit: l.transit.iter().map(|b| Batch { due: b.due, mass: b.mass, vehicles: Vec::new() }).collect(),
                inflow: l.inflow,
            })
            .collect();
        SimState {
            t: self.t,
            flow: FlowModel::Fluid,
            links,
            signals: self.signals.clone(),
            control: self.control.clone(),
            remainder: self.remainder.clone(),
            vehicles: Vec::new(),
            entered: self.entered,
            exited: self.exited,
            rejected: self.rejected,
            source_links: self.source_links.clone(),
            backlog: self.backlog.clone(),
            demand: self.demand.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Checks conservation, non-negativity, capacity and the trackers of the
    /// vehicles currently in the network.
    pub fn check_invariants(&self, net: &Network) -> Result<(), InvariantViolation> {
        let exact = self.flow == FlowModel::Vehicles;
        for (l, ls) in self.links.iter().enumerate() {
            for lane in &ls.lanes {
                if lane.mass < 0.0 {
                    return Err(InvariantViolation::Negative { link: l });
                }
                if exact && lane.mass != lane.vehicles.len() as f64 {
                    return Err(InvariantViolation::Tracking { link: l });
                }
            }
            for b in &ls.transit {
                if b.mass < 0.0 {
                    return Err(InvariantViolation::Negative { link: l });
                }
                if exact && b.mass != b.vehicles.len() as f64 {
                    return Err(InvariantViolation::Tracking { link: l });
                }
            }
            if ls.occupancy() > f64::from(net.link(l).capacity) + 1e-9 {
                return Err(InvariantViolation::Capacity { link: l, occupancy: ls.occupancy() });
            }
        }
        let residual = self.entered - self.exited - self.present();
        let ok = if exact { residual == 0.0 } else { libm::fabs(residual) <= 1e-9 };
        if !ok {
            return Err(InvariantViolation::Conservation { residual });
        }
        if exact {
            for ls in &self.links {
                let ids = ls.lanes.iter().flat_map(|ln| ln.vehicles.iter()).chain(ls.transit.iter().flat_map(|b| b.vehicles.iter()));
                for &id in ids {
                    let v = &self.vehicles[id as usize];
                    if v.exit_step.is_some() || v.delay_s > v.travel_time_s {
                        return Err(InvariantViolation::Record { id });
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks every vehicle record ever created, including completed trips.
    pub fn check_records(&self) -> Result<(), InvariantViolation> {
        for v in &self.vehicles {
            if v.delay_s > v.travel_time_s || matches!(v.exit_step, Some(e) if e < v.entry_step) {
                return Err(InvariantViolation::Record { id: v.id });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvariantViolation {
    #[error("negative count on link {link}")]
    Negative { link: usize },
    #[error("link {link} holds {occupancy} vehicles, above its capacity")]
    Capacity { link: usize, occupancy: f64 },
    #[error("conservation broken: entered - exited - present = {residual}")]
    Conservation { residual: f64 },
    #[error("vehicle identities and counts disagree on link {link}")]
    Tracking { link: usize },
    #[error("vehicle {id} has an inconsistent record")]
    Record { id: u32 },
}

/// Applies the signal part of a step to every intersection.
pub fn apply_signals(net: &Network, cfg: &SimConfig, state: &mut SimState, actions: &[SignalAction]) -> Result<Vec<Transition>, SimError> {
    if actions.len() != net.n_intersections() {
        return Err(SimError::ActionCount { expected: net.n_intersections(), got: actions.len() });
    }
    let mut out = Vec::with_capacity(actions.len());
    for (i, action) in actions.iter().enumerate() {
        let timing = net.timing(i);
        let n_phases = net.n_phases(i);
        let tr = match &state.control[i] {
            ControlMode::Cycle(plan) => {
                let yellow = f64::from(timing.yellow) * cfg.step_s;
                let all_red = f64::from(timing.all_red) * cfg.step_s;
                let cs = apply_cycle_plan(plan, yellow, all_red, state.t, cfg.step_s);
                let prev = state.signals[i];
                let mut tr = Transition::default();
                if prev.mode == SignalMode::Green && cs.mode != SignalMode::Green && prev.complete && state.t > 0 {
                    tr.green_ended = Some(prev.elapsed);
                }
                let next_entry = (cs.entry + 1) % plan.phases.len();
                state.signals[i] = SignalState {
                    phase: cs.phase,
                    mode: cs.mode,
                    elapsed: cs.elapsed,
                    next_phase: plan.phases[next_entry],
                    complete: cs.started_in_window,
                };
                tr
            }
            mode => apply_signal_action(&mut state.signals[i], timing, n_phases, mode, action)
                .map_err(|source| SimError::Signal { intersection: i, source })?,
        };
        out.push(tr);
    }
    Ok(out)
}

/// Advances the simulation by one step. See the module docs for the stage order.
pub fn step(net: &Network, cfg: &SimConfig, state: &mut SimState, actions: &[SignalAction], arrivals: Arrivals<'_>) -> Result<StepEvents, SimError> {
    let t = state.t;
    let tau = cfg.step_s;
    let fluid = state.flow == FlowModel::Fluid;

    // 1. signals
    let transitions = apply_signals(net, cfg, state, actions)?;

    for ls in &mut state.links {
        ls.inflow = 0.0;
    }

    // 2. boundary arrivals
    let (sources, generated): (Vec<usize>, Vec<f64>) = match arrivals {
        Arrivals::FromProfile(profile) => {
            let links: Vec<usize> = profile.sources().iter().map(|(l, _)| *l).collect();
            let counts: Vec<f64> = match (cfg.arrivals, fluid) {
                (ArrivalProcess::Poisson, _) => {
                    profile.sample_arrivals(&mut state.demand, t, tau, &mut state.rng).into_iter().map(f64::from).collect()
                }
                (ArrivalProcess::Expected, true) => profile.expected_arrivals(&mut state.demand, t, tau),
                (ArrivalProcess::Expected, false) => profile.deterministic_counts(&mut state.demand, t, tau).into_iter().map(f64::from).collect(),
            };
            (links, counts)
        }
        Arrivals::Given(counts) => {
            if counts.len() != state.source_links.len() {
                return Err(SimError::ArrivalCount { expected: state.source_links.len(), got: counts.len() });
            }
            let links = state.source_links.clone();
            let counts = if fluid { counts.to_vec() } else { counts.iter().map(|c| math::floor(*c)).collect() };
            (links, counts)
        }
    };
    let mut admitted = alloc::vec![0.0; generated.len()];
    for (k, (&link, &count)) in sources.iter().zip(&generated).enumerate() {
        let residual = f64::from(net.link(link).capacity) - state.links[link].occupancy();
        let residual = if fluid { residual.max(0.0) } else { math::floor(residual + 1e-9).max(0.0) };
        let waiting = match cfg.blocked {
            BlockedArrivals::Hold => state.backlog[k] + count,
            BlockedArrivals::Reject => count,
        };
        let admit = waiting.min(residual);
        match cfg.blocked {
            BlockedArrivals::Hold => state.backlog[k] = waiting - admit,
            BlockedArrivals::Reject => state.rejected += waiting - admit,
        }
        admitted[k] = admit;
        if admit > 0.0 {
            let ids: Vec<u32> = if fluid { Vec::new() } else { (0..admit as u32).map(|_| state.spawn(Some(link))).collect() };
            state.entered += admit;
            state.links[link].inflow += admit;
            push_transit(&mut state.links[link], t + u64::from(net.lag(link)), admit, ids);
        }
    }

    // 3. matured in-transit traffic
    let mut exits = 0.0;
    let mut matured = alloc::vec![0.0; net.n_links()];
    for (l, arrived) in matured.iter_mut().enumerate() {
        while state.links[l].transit.front().is_some_and(|b| b.due <= t) {
            let batch = state.links[l].transit.pop_front().expect("front checked");
            *arrived += batch.mass;
            let lanes = net.lanes(l);
            if lanes.is_empty() {
                exits += batch.mass;
                for id in batch.vehicles {
                    finish(&mut state.vehicles[id as usize], t);
                }
                continue;
            }
            if fluid {
                for (k, &m) in lanes.iter().enumerate() {
                    state.links[l].lanes[k].mass += batch.mass * net.turn_share(m);
                }
            } else {
                let shares: Vec<f64> = lanes.iter().map(|&m| net.turn_share(m)).collect();
                for id in batch.vehicles {
                    let k = if lanes.len() == 1 { 0 } else { rng::categorical(&mut state.rng, &shares) };
                    let lane = &mut state.links[l].lanes[k];
                    lane.mass += 1.0;
                    lane.vehicles.push_back(id);
                }
            }
        }
    }

    // 4. green discharge
    let mut green = alloc::vec![false; net.n_movements()];
    for (i, sig) in state.signals.iter().enumerate() {
        if sig.is_green() {
            for &m in net.phase_movements(i, sig.phase) {
                green[m] = true;
            }
        }
    }
    for &(a, b) in net.conflicts() {
        if green[a] && green[b] {
            return Err(SimError::ConflictViolation(a, b));
        }
    }
    let mut residual: Vec<f64> = (0..net.n_links()).map(|l| f64::from(net.link(l).capacity) - state.links[l].occupancy()).collect();
    let mut discharges = alloc::vec![0.0; net.n_movements()];
    for m in (0..net.n_movements()).filter(|&m| green[m]) {
        let mv = net.movement(m);
        let link = mv.in_link;
        let lane = net.lane_of(m);
        let queued = state.links[link].lanes[lane].mass;
        let rate = net.link(link).saturation_rate * tau;
        let room = mv.out_link.map_or(f64::INFINITY, |o| residual[o].max(0.0));
        let n = if fluid {
            queued.min(rate).min(room)
        } else {
            let avail = state.remainder[m] + rate;
            let whole = math::floor(avail + 1e-9);
            state.remainder[m] = (avail - whole).max(0.0);
            queued.min(whole).min(math::floor(room + 1e-9))
        };
        if n <= 0.0 {
            continue;
        }
        discharges[m] = n;
        state.links[link].lanes[lane].mass -= n;
        let ids: Vec<u32> = if fluid {
            Vec::new()
        } else {
            (0..n as u32).map(|_| state.links[link].lanes[lane].vehicles.pop_front().expect("mass matches vehicles")).collect()
        };
        match mv.out_link {
            Some(o) => {
                residual[o] -= n;
                state.links[o].inflow += n;
                for &id in &ids {
                    let v = &mut state.vehicles[id as usize];
                    v.link = Some(o);
                    v.link_delay_s = 0.0;
                    v.link_time_s = 0.0;
                }
                push_transit(&mut state.links[o], t + u64::from(net.lag(o)), n, ids);
            }
            None => {
                exits += n;
                for id in ids {
                    finish(&mut state.vehicles[id as usize], t);
                }
            }
        }
    }
    state.exited += exits;

    // 5. trackers
    if !fluid {
        let stop = cfg.stop_speed;
        for (l, ls) in state.links.iter().enumerate() {
            let vstar = net.link(l).free_flow_speed;
            let queued = ls.lanes.iter().flat_map(|ln| ln.vehicles.iter()).map(|id| (*id, 0.0));
            let moving = ls.transit.iter().flat_map(|b| b.vehicles.iter()).map(|id| (*id, vstar));
            for (id, speed) in queued.chain(moving) {
                let v = &mut state.vehicles[id as usize];
                let was_moving = v.speed > stop;
                v.speed = speed;
                v.travel_time_s += tau;
                v.link_time_s += tau;
                v.stops_last_step = 0;
                if speed <= stop {
                    v.delay_s += tau;
                    v.link_delay_s += tau;
                    if was_moving {
                        v.stops += 1;
                        v.stops_last_step = 1;
                    }
                }
            }
        }
    }

    // 6. clock
    state.t += 1;

    Ok(StepEvents { t, signals: state.signals.clone(), transitions, generated, admitted, matured, discharges, exits })
}

fn push_transit(link: &mut LinkState, due: u64, mass: f64, ids: Vec<u32>) {
    match link.transit.back_mut() {
        Some(b) if b.due == due => {
            b.mass += mass;
            b.vehicles.extend(ids);
        }
        _ => link.transit.push_back(Batch { due, mass, vehicles: ids }),
    }
}

fn finish(v: &mut VehicleRecord, t: u64) {
    v.exit_step = Some(t);
    v.link = None;
    v.stops_last_step = 0;
}

/// Network, configuration, demand and state bundled for convenience.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub net: Network,
    pub cfg: SimConfig,
    pub demand: DemandProfile,
    pub state: SimState,
}

impl Simulation {
    pub fn new(net: Network, cfg: SimConfig, demand: DemandProfile, control: Vec<ControlMode>, rng: SimRng) -> Result<Self, SimError> {
        let state = SimState::new(&net, &cfg, &demand, control, rng)?;
        Ok(Self { net, cfg, demand, state })
    }

    pub fn step(&mut self, actions: &[SignalAction]) -> Result<StepEvents, SimError> {
        step(&self.net, &self.cfg, &mut self.state, actions, Arrivals::FromProfile(&self.demand))
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.cfg.horizon
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::SourceDemand;
    use crate::network::presets::{corridor, single_cross, ApproachParams};
    use crate::rng::{stream, StreamRole};
    use crate::signal::InterlockMonitor;
    use alloc::vec;

    fn build(spec: crate::network::NetworkSpec, cfg: &SimConfig, rate: f64) -> Simulation {
        let net = Network::new(spec, cfg).unwrap();
        let demand = DemandProfile::uniform(&net, rate).unwrap();
        let n = net.n_intersections();
        Simulation::new(net, cfg.clone(), demand, vec![ControlMode::Fps; n], stream(cfg.seed, 0, StreamRole::Simulation)).unwrap()
    }

    #[test]
    fn empty_network_only_clock_and_signals_change() {
        let cfg = SimConfig::default();
        let mut sim = build(single_cross(ApproachParams::default(), 5.0, 60.0), &cfg, 0.0);
        for k in 0..100 {
            let a = if k % 9 == 0 { SignalAction::Change } else { SignalAction::Extend };
            let ev = sim.step(&[a]).unwrap();
            assert_eq!(ev.exits, 0.0);
            assert!(ev.discharges.iter().all(|d| *d == 0.0));
            assert_eq!(sim.state.present(), 0.0);
        }
        assert_eq!(sim.state.t, 100);
        assert!(sim.state.vehicles.is_empty());
    }

    #[test]
    fn discharge_is_saturation_times_step() {
        let cfg = SimConfig { step_s: 2.0, default_yellow_s: 2.0, default_all_red_s: 2.0, ..SimConfig::default() };
        let p = ApproachParams { saturation: 0.5, ..ApproachParams::default() };
        let mut sim = build(single_cross(p, 6.0, 60.0), &cfg, 0.0);
        sim.state.load_queue(&sim.net, 0, 10.0);
        let ev = sim.step(&[SignalAction::Extend]).unwrap();
        assert_eq!(ev.discharges[0], 1.0);
        assert_eq!(sim.state.queue(0), 9.0);
    }

    #[test]
    fn fractional_saturation_carries_remainder() {
        let cfg = SimConfig::default();
        let p = ApproachParams { saturation: 0.4, ..ApproachParams::default() };
        let mut sim = build(single_cross(p, 5.0, 1000.0), &cfg, 0.0);
        sim.state.load_queue(&sim.net, 0, 100.0);
        let mut out = 0.0;
        for _ in 0..100 {
            out += sim.step(&[SignalAction::Extend]).unwrap().exits;
        }
        assert_eq!(out, 40.0);
    }

    #[test]
    fn zero_residual_blocks_discharge() {
        let cfg = SimConfig::default();
        let art = ApproachParams { capacity: 3, saturation: 1.0, ..ApproachParams::default() };
        let net = Network::new(corridor(2, art, ApproachParams::default(), 5.0, 60.0), &cfg).unwrap();
        let demand = DemandProfile::uniform(&net, 0.0).unwrap();
        let mut st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps; 2], stream(1, 0, StreamRole::Simulation)).unwrap();
        // fill I1's arterial approach (link A1) to capacity, queue on I0's arterial
        st.load_queue(&net, 2, 3.0);
        st.load_queue(&net, 0, 3.0);
        // I1 serves its side street so A1 stays full
        st.signals[1] = SignalState { phase: 1, ..SignalState::initial() };
        let ev = step(&net, &cfg, &mut st, &[SignalAction::Extend, SignalAction::Extend], Arrivals::FromProfile(&demand)).unwrap();
        assert_eq!(ev.discharges[0], 0.0);
        assert_eq!(st.queue(0), 3.0);
    }

    #[test]
    fn vehicles_flow_through_corridor_and_conserve() {
        let cfg = SimConfig { seed: 11, ..SimConfig::default() };
        let mut sim = build(corridor(3, ApproachParams::default(), ApproachParams::default(), 5.0, 30.0), &cfg, 0.15);
        let mut monitors: Vec<InterlockMonitor> = (0..3).map(|i| InterlockMonitor::new(sim.net.timing(i), sim.state.signals[i])).collect();
        for k in 0..2000 {
            let a = if k % 20 == 0 { SignalAction::Change } else { SignalAction::Extend };
            sim.step(&[a.clone(), a.clone(), a]).unwrap();
            sim.state.check_invariants(&sim.net).unwrap();
            for (i, m) in monitors.iter_mut().enumerate() {
                m.observe(k, sim.state.signals[i]).unwrap();
            }
        }
        assert!(sim.state.completed().count() > 100);
        for v in sim.state.completed() {
            assert!(v.delay_s <= v.travel_time_s);
        }
    }

    #[test]
    fn fluid_model_conserves_mass() {
        let cfg = SimConfig { flow: FlowModel::Fluid, arrivals: ArrivalProcess::Expected, ..SimConfig::default() };
        let mut sim = build(corridor(2, ApproachParams::default(), ApproachParams::default(), 5.0, 30.0), &cfg, 0.13);
        for k in 0..1000 {
            let a = if k % 15 == 0 { SignalAction::Change } else { SignalAction::Extend };
            sim.step(&[a.clone(), a]).unwrap();
            sim.state.check_invariants(&sim.net).unwrap();
        }
        assert!(sim.state.exited > 0.0);
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = SimConfig { seed: 5, ..SimConfig::default() };
        let run = || {
            let mut sim = build(corridor(2, ApproachParams::default(), ApproachParams::default(), 5.0, 30.0), &cfg, 0.2);
            let mut log = Vec::new();
            for k in 0..500 {
                let a = if k % 13 == 0 { SignalAction::Change } else { SignalAction::Extend };
                let ev = sim.step(&[a.clone(), a]).unwrap();
                log.push((ev.admitted, ev.discharges));
            }
            log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn hold_backlog_enters_later() {
        let cfg = SimConfig::default();
        let p = ApproachParams { capacity: 2, ..ApproachParams::default() };
        let net = Network::new(single_cross(p, 5.0, 60.0), &cfg).unwrap();
        let demand = DemandProfile::new(&net, vec![(1, SourceDemand::constant(0.0))]).unwrap();
        let mut st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps], stream(1, 0, StreamRole::Simulation)).unwrap();
        let ev = step(&net, &cfg, &mut st, &[SignalAction::Extend], Arrivals::Given(&[5.0])).unwrap();
        assert_eq!(ev.admitted, vec![2.0]);
        assert_eq!(st.backlog, vec![3.0]);
        st.check_invariants(&net).unwrap();
    }
}
