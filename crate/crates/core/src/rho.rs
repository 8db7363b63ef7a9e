//! Rolling-horizon optimisation (MPC): forecast the boundary demand, search
//! the feasible extend/change tree of the controlled intersection over the
//! prediction horizon with a deterministic fluid copy of the simulator,
//! apply the first action and re-plan.
//!
//! The internal model is the whole network in the fluid flow model. Other
//! intersections keep their configured mode: cycle plans run as planned,
//! actuated neighbours are assumed to extend (until max green forces a
//! change). The search is exact: two branches reaching bit-identical model
//! states at the same depth have identical futures, so the one with the
//! lower accumulated objective can be dropped.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::control::{ControlError, DecisionContext, SignalController};
use crate::demand::DemandProfile;
use crate::frame::belief::{BeliefFilter, DemandBelief};
use crate::metrics::{intersection_step_metrics, CostCoefficients, Criterion};
use crate::network::Network;
use crate::signal::{feasible_fps_actions, ControlMode, SignalAction};
use crate::sim::{step, Arrivals, FlowModel, SimConfig, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Forecaster {
    /// Expected arrivals from the true profile.
    Oracle,
    /// Expected arrivals under the filtered regime belief.
    Belief,
    /// Last observed count, held.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoConfig {
    /// Prediction horizon `T_p`, steps.
    pub horizon: usize,
    pub criterion: Criterion,
    pub forecaster: Forecaster,
    /// Re-plan every `stride` steps; in between the stored plan is followed.
    pub stride: usize,
    /// Prior of the per-source demand filters (belief forecaster).
    pub prior: Option<DemandBelief>,
}

impl RhoConfig {
    pub fn new(horizon: usize, forecaster: Forecaster) -> Self {
        Self { horizon, criterion: Criterion::Queue, forecaster, stride: 1, prior: None }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.horizon == 0 {
            return Err("prediction horizon must be at least one step");
        }
        if self.stride == 0 || self.stride > self.horizon {
            return Err("stride must lie in 1..=horizon");
        }
        if !fluid_criterion(self.criterion) {
            return Err("criterion is not available in the fluid model");
        }
        if self.forecaster == Forecaster::Belief && self.prior.is_none() {
            return Err("belief forecaster needs a prior");
        }
        Ok(())
    }
}

/// Criteria the fluid model can evaluate (no per-vehicle trackers).
pub fn fluid_criterion(c: Criterion) -> bool {
    matches!(c, Criterion::Queue | Criterion::VehicleCount | Criterion::ActualDelay)
}

/// Expected arrivals per demand source for the next `horizon` steps,
/// `[k][source]`. `last_counts` are the entries seen on each source link
/// during the last step.
pub fn forecast_exogenous(
    mode: Forecaster,
    horizon: usize,
    demand: &DemandProfile,
    state: &SimState,
    last_counts: &[f64],
    filter: Option<&BeliefFilter>,
    step_s: f64,
) -> Result<Vec<Vec<f64>>, ControlError> {
    Ok(match mode {
        Forecaster::Oracle => (0..horizon as u64).map(|k| demand.forecast(&state.demand, state.t, k, step_s)).collect(),
        Forecaster::Flat => alloc::vec![last_counts.to_vec(); horizon],
        Forecaster::Belief => {
            let f = filter.ok_or(ControlError::MissingBelief)?;
            (0..horizon).map(|k| f.beliefs.iter().map(|b| b.expected_arrivals(k + 1, step_s)).collect()).collect()
        }
    })
}

/// The deterministic model used for planning.
#[derive(Debug, Clone)]
pub struct InternalModel<'a> {
    pub net: &'a Network,
    pub cfg: SimConfig,
    pub intersection: usize,
    pub criterion: Criterion,
}

impl<'a> InternalModel<'a> {
    pub fn new(net: &'a Network, cfg: &SimConfig, intersection: usize, criterion: Criterion) -> Self {
        Self { net, cfg: SimConfig { flow: FlowModel::Fluid, ..cfg.clone() }, intersection, criterion }
    }

    /// One model step; returns the step's objective contribution.
    pub fn advance(&self, state: &mut SimState, action: &SignalAction, arrivals: &[f64]) -> Result<f64, ControlError> {
        let mut joint = alloc::vec![SignalAction::Extend; self.net.n_intersections()];
        joint[self.intersection] = action.clone();
        step(self.net, &self.cfg, state, &joint, Arrivals::Given(arrivals))?;
        let m = intersection_step_metrics(self.net, &self.cfg, state, self.intersection, 0.0, CostCoefficients::default());
        Ok(-m.get(self.criterion))
    }

    pub fn feasible(&self, state: &SimState) -> &'static [SignalAction] {
        feasible_fps_actions(&state.signals[self.intersection], self.net.timing(self.intersection))
    }
}

/// Model states after each action of `actions`, which must be feasible.
pub fn rollout(model: &InternalModel<'_>, start: &SimState, actions: &[SignalAction], exo: &[Vec<f64>]) -> Result<Vec<SimState>, ControlError> {
    let mut s = start.to_fluid();
    let mut out = Vec::with_capacity(actions.len());
    for (k, a) in actions.iter().enumerate() {
        if !model.feasible(&s).contains(a) {
            return Err(ControlError::InfeasibleSequence(k));
        }
        model.advance(&mut s, a, &exo[k])?;
        out.push(s.clone());
    }
    Ok(out)
}

/// Objective of a feasible sequence: per-step values summed left to right.
pub fn sequence_objective(model: &InternalModel<'_>, start: &SimState, actions: &[SignalAction], exo: &[Vec<f64>]) -> Result<f64, ControlError> {
    let mut s = start.to_fluid();
    let mut total = 0.0;
    for (k, a) in actions.iter().enumerate() {
        if !model.feasible(&s).contains(a) {
            return Err(ControlError::InfeasibleSequence(k));
        }
        total += model.advance(&mut s, a, &exo[k])?;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct HorizonSolution {
    pub actions: Vec<SignalAction>,
    pub states: Vec<SimState>,
    pub objective: f64,
    /// Search nodes expanded.
    pub nodes: u64,
}

/// Everything that can influence the model's future, as exact bit patterns.
fn fingerprint(s: &SimState) -> Vec<u64> {
    let mut out = Vec::new();
    for l in &s.links {
        out.extend(l.lanes.iter().map(|ln| ln.mass.to_bits()));
        out.push(l.transit.len() as u64);
        for b in &l.transit {
            out.push(b.due);
            out.push(b.mass.to_bits());
        }
    }
    for g in &s.signals {
        out.extend([g.phase as u64, g.mode as u64, u64::from(g.elapsed), g.next_phase as u64, u64::from(g.complete)]);
    }
    out.extend(s.backlog.iter().map(|x| x.to_bits()));
    out.extend(s.remainder.iter().map(|x| x.to_bits()));
    out
}

/// Best feasible sequence over `exo.len()` steps. Ties go to the
/// lexicographically first sequence with Extend before Change.
pub fn optimize_horizon(model: &InternalModel<'_>, start: &SimState, exo: &[Vec<f64>]) -> Result<HorizonSolution, ControlError> {
    struct Search<'m, 'n> {
        model: &'m InternalModel<'n>,
        exo: &'m [Vec<f64>],
        memo: BTreeMap<(usize, Vec<u64>), f64>,
        path: Vec<SignalAction>,
        best: Option<(f64, Vec<SignalAction>)>,
        nodes: u64,
    }
    impl Search<'_, '_> {
        fn go(&mut self, s: &SimState, value: f64) -> Result<(), ControlError> {
            self.nodes += 1;
            let depth = self.path.len();
            if depth == self.exo.len() {
                if self.best.as_ref().is_none_or(|(b, _)| value > *b) {
                    self.best = Some((value, self.path.clone()));
                }
                return Ok(());
            }
            let key = (depth, fingerprint(s));
            if let Some(seen) = self.memo.get(&key) {
                if value <= *seen {
                    return Ok(());
                }
            }
            self.memo.insert(key, value);
            for a in self.model.feasible(s) {
                let mut next = s.clone();
                let r = self.model.advance(&mut next, a, &self.exo[depth])?;
                self.path.push(a.clone());
                self.go(&next, value + r)?;
                self.path.pop();
            }
            Ok(())
        }
    }
    let s0 = start.to_fluid();
    let mut search = Search { model, exo, memo: BTreeMap::new(), path: Vec::new(), best: None, nodes: 0 };
    search.go(&s0, 0.0)?;
    let (objective, actions) = search.best.expect("extend or change is always feasible");
    let states = rollout(model, &s0, &actions, exo)?;
    Ok(HorizonSolution { actions, states, objective, nodes: search.nodes })
}

/// Every feasible sequence with its objective, in lexicographic order.
pub fn enumerate_sequences(model: &InternalModel<'_>, start: &SimState, exo: &[Vec<f64>]) -> Result<Vec<(Vec<SignalAction>, f64)>, ControlError> {
    fn go(
        model: &InternalModel<'_>,
        exo: &[Vec<f64>],
        s: &SimState,
        path: &mut Vec<SignalAction>,
        value: f64,
        out: &mut Vec<(Vec<SignalAction>, f64)>,
    ) -> Result<(), ControlError> {
        if path.len() == exo.len() {
            out.push((path.clone(), value));
            return Ok(());
        }
        for a in model.feasible(s) {
            let mut next = s.clone();
            let r = model.advance(&mut next, a, &exo[path.len()])?;
            path.push(a.clone());
            go(model, exo, &next, path, value + r, out)?;
            path.pop();
        }
        Ok(())
    }
    let mut out = Vec::new();
    go(model, exo, &start.to_fluid(), &mut Vec::new(), 0.0, &mut out)?;
    Ok(out)
}

/// Exhaustive reference: the first sequence attaining the maximum.
pub fn brute_force_horizon(model: &InternalModel<'_>, start: &SimState, exo: &[Vec<f64>]) -> Result<(Vec<SignalAction>, f64), ControlError> {
    let all = enumerate_sequences(model, start, exo)?;
    let mut best = 0;
    for (k, (_, v)) in all.iter().enumerate() {
        if *v > all[best].1 {
            best = k;
        }
    }
    Ok(all[best].clone())
}

/// Repeated one-step look-ahead, evaluated under the model.
pub fn greedy_sequence(model: &InternalModel<'_>, start: &SimState, exo: &[Vec<f64>]) -> Result<(Vec<SignalAction>, f64), ControlError> {
    let mut s = start.to_fluid();
    let mut actions = Vec::new();
    let mut total = 0.0;
    for e in exo {
        let one = optimize_horizon(model, &s, core::slice::from_ref(e))?;
        let a = one.actions[0].clone();
        total += model.advance(&mut s, &a, e)?;
        actions.push(a);
    }
    Ok((actions, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: u64,
    pub forecast: Vec<Vec<f64>>,
    pub actions: Vec<SignalAction>,
    pub predicted: f64,
    /// Realised objective over the same window, filled in as steps complete.
    pub realized: f64,
    pub realized_steps: usize,
}

#[derive(Debug, Clone)]
pub struct RhoController {
    pub cfg: RhoConfig,
    pub intersection: usize,
    filter: Option<BeliefFilter>,
    plan: Vec<SignalAction>,
    plan_pos: usize,
    pub trace: Vec<TraceEntry>,
}

impl RhoController {
    pub fn new(cfg: RhoConfig, intersection: usize, net: &Network, demand: &DemandProfile) -> Self {
        let links: Vec<usize> = demand.sources().iter().map(|(l, _)| *l).collect();
        let _ = net;
        let filter = cfg.prior.as_ref().map(|p| BeliefFilter::new(links, p));
        Self { cfg, intersection, filter, plan: Vec::new(), plan_pos: 0, trace: Vec::new() }
    }

    pub fn filter(&self) -> Option<&BeliefFilter> {
        self.filter.as_ref()
    }

    fn record_realized(&mut self, ctx: &DecisionContext<'_>) {
        let m = intersection_step_metrics(ctx.net, ctx.cfg, ctx.state, self.intersection, 0.0, CostCoefficients::default());
        let v = -m.get(self.cfg.criterion);
        let done_step = ctx.state.t - 1;
        for e in self.trace.iter_mut().rev() {
            if e.t + (e.actions.len() as u64) <= done_step {
                break;
            }
            if e.t <= done_step {
                e.realized += v;
                e.realized_steps += 1;
            }
        }
    }
}

impl SignalController for RhoController {
    fn mode(&self) -> ControlMode {
        ControlMode::Fps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        let sources = &ctx.state.source_links;
        let counts: Vec<f64> = sources.iter().map(|&l| ctx.state.links[l].inflow).collect();
        if ctx.last.is_some() {
            if let Some(f) = &mut self.filter {
                f.observe(&counts, ctx.cfg.step_s);
            }
            self.record_realized(ctx);
        }
        let model = InternalModel::new(ctx.net, ctx.cfg, self.intersection, self.cfg.criterion);
        let replan = self.plan_pos >= self.plan.len() || self.plan_pos >= self.cfg.stride;
        if !replan {
            let a = self.plan[self.plan_pos].clone();
            self.plan_pos += 1;
            if model.feasible(ctx.state).contains(&a) {
                return Ok(a);
            }
        }
        let exo = forecast_exogenous(self.cfg.forecaster, self.cfg.horizon, ctx.demand, ctx.state, &counts, self.filter.as_ref(), ctx.cfg.step_s)?;
        let sol = optimize_horizon(&model, ctx.state, &exo)?;
        self.trace.push(TraceEntry {
            t: ctx.state.t,
            forecast: exo,
            actions: sol.actions.clone(),
            predicted: sol.objective,
            realized: 0.0,
            realized_steps: 0,
        });
        self.plan = sol.actions;
        self.plan_pos = 1;
        Ok(self.plan[0].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::presets::{single_cross, ApproachParams};
    use crate::rng::{stream, StreamRole};
    use crate::signal::SignalState;
    use crate::sim::ArrivalProcess;
    use alloc::vec;

    fn setup(min_s: f64) -> (Network, SimConfig, DemandProfile) {
        let cfg = SimConfig {
            flow: FlowModel::Fluid,
            arrivals: ArrivalProcess::Expected,
            default_yellow_s: 1.0,
            default_all_red_s: 1.0,
            ..SimConfig::default()
        };
        let p = ApproachParams { length_m: 5.0, speed: 10.0, saturation: 1.0, capacity: 50 };
        let net = Network::new(single_cross(p, min_s, 30.0), &cfg).unwrap();
        let demand = DemandProfile::uniform(&net, 0.0).unwrap();
        (net, cfg, demand)
    }

    fn fresh(net: &Network, cfg: &SimConfig, demand: &DemandProfile) -> SimState {
        SimState::new(net, cfg, demand, vec![ControlMode::Fps], stream(0, 0, StreamRole::Simulation)).unwrap()
    }

    #[test]
    fn empty_rollout() {
        let (net, cfg, demand) = setup(1.0);
        let st = fresh(&net, &cfg, &demand);
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let s = rollout(&model, &st, &[SignalAction::Extend], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(s[0].signals[0].elapsed, 1);
        assert_eq!(s[0].present(), 0.0);
    }

    #[test]
    fn queue_drains_at_saturation() {
        let (net, cfg, demand) = setup(1.0);
        let mut st = fresh(&net, &cfg, &demand);
        st.load_queue(&net, 0, 4.0);
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let s = rollout(&model, &st, &[SignalAction::Extend, SignalAction::Extend], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!((s[0].queue(0), s[1].queue(0)), (3.0, 2.0));
    }

    #[test]
    fn min_green_forces_extend() {
        let (net, cfg, demand) = setup(10.0);
        let mut st = fresh(&net, &cfg, &demand);
        st.load_queue(&net, 1, 8.0);
        st.signals[0] = SignalState { elapsed: 2, ..SignalState::initial() };
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let exo = vec![vec![0.0, 0.0]; 4];
        let sol = optimize_horizon(&model, &st, &exo).unwrap();
        assert_eq!(sol.actions, vec![SignalAction::Extend; 4]);
        assert_eq!(enumerate_sequences(&model, &st, &exo).unwrap().len(), 1);
    }

    #[test]
    fn matches_enumeration_and_beats_greedy() {
        let (net, cfg, demand) = setup(1.0);
        let mut st = fresh(&net, &cfg, &demand);
        st.load_queue(&net, 0, 1.0);
        st.load_queue(&net, 1, 6.0);
        st.signals[0] = SignalState { elapsed: 1, ..SignalState::initial() };
        let model = InternalModel::new(&net, &cfg, 0, Criterion::Queue);
        let exo = vec![vec![0.3, 0.6]; 6];
        let sol = optimize_horizon(&model, &st, &exo).unwrap();
        let (bf_actions, bf_value) = brute_force_horizon(&model, &st, &exo).unwrap();
        assert_eq!(sol.objective, bf_value);
        assert_eq!(sol.actions, bf_actions);
        assert_eq!(sequence_objective(&model, &st, &sol.actions, &exo).unwrap(), sol.objective);
        let (_, greedy) = greedy_sequence(&model, &st, &exo).unwrap();
        assert!(sol.objective >= greedy);
    }

    #[test]
    fn flat_and_belief_forecasts() {
        let (net, cfg, demand) = setup(1.0);
        let st = fresh(&net, &cfg, &demand);
        let e = forecast_exogenous(Forecaster::Flat, 3, &demand, &st, &[2.0, 0.0], None, 1.0).unwrap();
        assert_eq!(e, vec![vec![2.0, 0.0]; 3]);
        let b = DemandBelief::new(vec![1.0, 0.0], vec![0.1, 0.9], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let f = BeliefFilter::new(vec![0], &b);
        let e = forecast_exogenous(Forecaster::Belief, 2, &demand, &st, &[0.0], Some(&f), 1.0).unwrap();
        assert_eq!(e, vec![vec![0.1]; 2]);
        assert_eq!(forecast_exogenous(Forecaster::Belief, 2, &demand, &st, &[0.0], None, 1.0), Err(ControlError::MissingBelief));
        let _ = net;
    }
}
