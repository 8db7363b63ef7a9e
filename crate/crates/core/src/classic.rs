//! Non-learning baselines: Webster fixed-time plans, actuated gap-out /
//! max-out control, max-pressure and max-queue-first.
//!
//! Phase indices are scheme positions, counted from 0. Ties go to the
//! lowest index.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlError, DecisionContext, SignalController};
use crate::demand::DemandProfile;
use crate::math;
use crate::network::Network;
use crate::signal::{ControlMode, CyclePlan, SignalAction, SignalMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebsterInput {
    /// Critical flow per phase, veh/h.
    pub flows_vph: Vec<f64>,
    /// Saturation flow per phase, veh/h.
    pub saturation_vph: Vec<f64>,
    /// Lost time per cycle, s.
    pub lost_time_s: f64,
    /// Cycle length, s; computed when absent.
    pub cycle_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WebsterError {
    #[error("flow ratios sum to {0} >= 1")]
    Oversaturated(f64),
    #[error("all flows are zero")]
    DegenerateDemand,
    #[error("flows must be non-negative, saturation flows positive, one of each per phase")]
    BadFlows,
    #[error("lost time must be non-negative and shorter than the cycle")]
    LostTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebsterPlan {
    pub plan: CyclePlan,
    /// Effective green per phase, s.
    pub greens_s: Vec<f64>,
}

/// Optimal cycle `(1.5L + 5)/(1 − Y)` rounded up to whole seconds (unless
/// given) and effective greens `(C − L)·y_i/Y`. The lost time is shared
/// equally among the phases as their change intervals.
pub fn webster_plan(input: &WebsterInput) -> Result<WebsterPlan, WebsterError> {
    let n = input.flows_vph.len();
    if n == 0
        || input.saturation_vph.len() != n
        || input.flows_vph.iter().any(|f| !(*f >= 0.0) || !f.is_finite())
        || input.saturation_vph.iter().any(|s| !(*s > 0.0) || !s.is_finite())
    {
        return Err(WebsterError::BadFlows);
    }
    let l = input.lost_time_s;
    if !(l >= 0.0) || input.cycle_s.is_some_and(|c| !(l < c)) {
        return Err(WebsterError::LostTime);
    }
    let y: Vec<f64> = input.flows_vph.iter().zip(&input.saturation_vph).map(|(f, s)| f / s).collect();
    let total: f64 = y.iter().sum();
    if total == 0.0 {
        return Err(WebsterError::DegenerateDemand);
    }
    if total >= 1.0 {
        return Err(WebsterError::Oversaturated(total));
    }
    let c = input.cycle_s.unwrap_or_else(|| math::ceil((1.5 * l + 5.0) / (1.0 - total)));
    let change = l / n as f64;
    let greens_s: Vec<f64> = y.iter().map(|yi| (c - l) * yi / total).collect();
    let splits_s = greens_s.iter().map(|g| g + change).collect();
    Ok(WebsterPlan { plan: CyclePlan { phases: (0..n).collect(), splits_s, cycle_s: c, offset_s: 0.0 }, greens_s })
}

/// Long-run flow on every link (veh/s) from the demand's initial source
/// rates, pushed downstream through the turn shares.
pub fn static_link_flows(net: &Network, demand: &DemandProfile) -> Vec<f64> {
    let rates = demand.forecast(&demand.initial_state(), 0, 0, 1.0);
    let mut inject = alloc::vec![0.0; net.n_links()];
    for ((l, _), r) in demand.sources().iter().zip(rates) {
        inject[*l] += r;
    }
    let mut flow = inject.clone();
    for _ in 0..net.n_links() {
        let mut next = inject.clone();
        for m in 0..net.n_movements() {
            let mv = net.movement(m);
            if let Some(o) = mv.out_link {
                next[o] += flow[mv.in_link] * net.turn_share(m);
            }
        }
        if next == flow {
            break;
        }
        flow = next;
    }
    flow
}

/// Webster inputs for intersection `i`: per phase, the largest movement
/// flow and that movement's saturation flow; lost time is one change
/// interval per phase.
pub fn webster_input_for(net: &Network, i: usize, link_flows: &[f64], cycle_s: Option<f64>) -> WebsterInput {
    let mut flows_vph = Vec::new();
    let mut saturation_vph = Vec::new();
    for pos in 0..net.n_phases(i) {
        let pairs: Vec<(f64, f64)> = net
            .phase_movements(i, pos)
            .iter()
            .map(|&m| {
                let l = net.movement(m).in_link;
                (link_flows[l] * net.turn_share(m) * 3600.0, net.link(l).saturation_rate * 3600.0)
            })
            .collect();
        let ratios: Vec<f64> = pairs.iter().map(|(f, s)| f / s).collect();
        let (f, s) = pairs[argmax_lowest(&ratios)];
        flows_vph.push(f);
        saturation_vph.push(s);
    }
    let change_s = f64::from(net.timing(i).change_interval()) * net.step_s();
    WebsterInput { flows_vph, saturation_vph, lost_time_s: change_s * net.n_phases(i) as f64, cycle_s }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatedConfig {
    /// Unit extension: a gap longer than this ends the green.
    pub gap_s: f64,
    pub min_green_s: f64,
    pub max_green_s: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuatedError {
    #[error("gap time must be positive")]
    Gap,
    #[error("min green exceeds max green")]
    MinAboveMax,
}

impl ActuatedConfig {
    pub fn validate(&self) -> Result<(), ActuatedError> {
        if !(self.gap_s > 0.0) {
            return Err(ActuatedError::Gap);
        }
        if !(self.min_green_s <= self.max_green_s) {
            return Err(ActuatedError::MinAboveMax);
        }
        Ok(())
    }
}

/// Extend below min green; change at max green ("max out") or when the
/// last arrival on the served approach is older than the gap ("gap out").
pub fn actuated_decide(since_arrival_s: Option<f64>, elapsed_green_s: f64, cfg: &ActuatedConfig) -> SignalAction {
    if elapsed_green_s < cfg.min_green_s {
        return SignalAction::Extend;
    }
    if elapsed_green_s >= cfg.max_green_s {
        return SignalAction::Change;
    }
    match since_arrival_s {
        Some(s) if s <= cfg.gap_s => SignalAction::Extend,
        _ => SignalAction::Change,
    }
}

/// Actuated control of one intersection. Arrivals come from stop-line
/// detectors on the links served by the current phase.
#[derive(Debug, Clone)]
pub struct ActuatedController {
    pub cfg: ActuatedConfig,
    last_arrival: Vec<Option<u64>>,
}

impl ActuatedController {
    pub fn new(cfg: ActuatedConfig, net: &Network) -> Self {
        Self { cfg, last_arrival: alloc::vec![None; net.n_links()] }
    }
}

impl SignalController for ActuatedController {
    fn mode(&self) -> ControlMode {
        ControlMode::Fps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        let (net, st, i) = (ctx.net, ctx.state, ctx.intersection);
        if let Some(ev) = ctx.last {
            for (l, n) in ev.matured.iter().enumerate() {
                if *n > 0.0 {
                    self.last_arrival[l] = Some(ev.t);
                }
            }
        }
        let sig = st.signals[i];
        if sig.mode != SignalMode::Green {
            return Ok(SignalAction::Extend);
        }
        let since = net
            .phase_movements(i, sig.phase)
            .iter()
            .filter_map(|&m| self.last_arrival[net.movement(m).in_link])
            .max()
            .map(|k| (st.t - k) as f64 * ctx.cfg.step_s);
        Ok(actuated_decide(since, sig.elapsed_s(ctx.cfg.step_s), &self.cfg))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = k;
        }
    }
    best
}

/// Per-phase pressure `Σ w·(q_up − q_down)` from `(q_up, q_down, w)` triples.
pub fn phase_pressures(phases: &[Vec<(f64, f64, f64)>]) -> Vec<f64> {
    phases.iter().map(|p| p.iter().map(|(u, d, w)| w * (u - d)).sum()).collect()
}

/// Phase with the largest unweighted pressure; each phase lists
/// `(upstream, downstream)` queues of its movements.
pub fn max_pressure_decide(phases: &[Vec<(f64, f64)>]) -> SignalAction {
    let weighted: Vec<Vec<(f64, f64, f64)>> = phases.iter().map(|p| p.iter().map(|(u, d)| (*u, *d, 1.0)).collect()).collect();
    SignalAction::Select(argmax_lowest(&phase_pressures(&weighted)))
}

/// Phase with the largest summed upstream queue, downstream ignored.
pub fn max_queue_first_decide(totals: &[f64]) -> SignalAction {
    SignalAction::Select(argmax_lowest(totals))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPressureConfig {
    /// Weight each movement by its saturation discharge per step.
    pub weighted: bool,
    /// Count in-transit vehicles on the downstream link as queued.
    pub count_in_transit: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxPressureController {
    pub cfg: MaxPressureConfig,
}

impl SignalController for MaxPressureController {
    fn mode(&self) -> ControlMode {
        ControlMode::Vps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        let (net, st, i) = (ctx.net, ctx.state, ctx.intersection);
        let phases: Vec<Vec<(f64, f64, f64)>> = (0..net.n_phases(i))
            .map(|pos| {
                net.phase_movements(i, pos)
                    .iter()
                    .map(|&m| {
                        let mv = net.movement(m);
                        let up = st.links[mv.in_link].lanes[net.lane_of(m)].mass;
                        let down = mv.out_link.map_or(0.0, |o| {
                            let ls = &st.links[o];
                            if self.cfg.count_in_transit {
                                ls.occupancy()
                            } else {
                                ls.queue()
                            }
                        });
                        let w = if self.cfg.weighted { net.link(mv.in_link).saturation_rate * ctx.cfg.step_s } else { 1.0 };
                        (up, down, w)
                    })
                    .collect()
            })
            .collect();
        Ok(SignalAction::Select(argmax_lowest(&phase_pressures(&phases))))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxQueueFirstController;

impl SignalController for MaxQueueFirstController {
    fn mode(&self) -> ControlMode {
        ControlMode::Vps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        let (net, st, i) = (ctx.net, ctx.state, ctx.intersection);
        let totals: Vec<f64> = (0..net.n_phases(i))
            .map(|pos| net.phase_movements(i, pos).iter().map(|&m| st.links[net.movement(m).in_link].lanes[net.lane_of(m)].mass).sum())
            .collect();
        Ok(max_queue_first_decide(&totals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn webster_symmetric() {
        let w = webster_plan(&WebsterInput { flows_vph: vec![300.0; 4], saturation_vph: vec![1800.0; 4], lost_time_s: 8.0, cycle_s: Some(68.0) })
            .unwrap();
        assert_eq!(w.greens_s, vec![15.0; 4]);
        assert_eq!(w.plan.splits_s.iter().sum::<f64>(), 68.0);
    }

    #[test]
    fn webster_proportional() {
        let w = webster_plan(&WebsterInput {
            flows_vph: vec![600.0, 300.0],
            saturation_vph: vec![1800.0, 1800.0],
            lost_time_s: 10.0,
            cycle_s: Some(60.0),
        })
        .unwrap();
        assert!((w.greens_s[0] - 100.0 / 3.0).abs() < 1e-12);
        assert!((w.greens_s[1] - 50.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn webster_auto_cycle_and_errors() {
        let w = webster_plan(&WebsterInput { flows_vph: vec![600.0, 300.0], saturation_vph: vec![1800.0, 1800.0], lost_time_s: 10.0, cycle_s: None })
            .unwrap();
        // (1.5·10 + 5)/(1 − 0.5) = 40
        assert_eq!(w.plan.cycle_s, 40.0);
        let over = WebsterInput { flows_vph: vec![1200.0, 960.0], saturation_vph: vec![1800.0, 1800.0], lost_time_s: 10.0, cycle_s: None };
        assert!(matches!(webster_plan(&over), Err(WebsterError::Oversaturated(_))));
        let none = WebsterInput { flows_vph: vec![0.0, 0.0], ..over };
        assert_eq!(webster_plan(&none), Err(WebsterError::DegenerateDemand));
    }

    #[test]
    fn actuated_rules() {
        let cfg = ActuatedConfig { gap_s: 3.0, min_green_s: 5.0, max_green_s: 60.0 };
        assert_eq!(actuated_decide(None, 2.0, &cfg), SignalAction::Extend);
        assert_eq!(actuated_decide(Some(4.0), 20.0, &cfg), SignalAction::Change);
        assert_eq!(actuated_decide(Some(3.0), 20.0, &cfg), SignalAction::Extend);
        assert_eq!(actuated_decide(Some(0.0), 60.0, &cfg), SignalAction::Change);
        assert_eq!(ActuatedConfig { gap_s: 0.0, ..cfg }.validate(), Err(ActuatedError::Gap));
    }

    #[test]
    fn max_pressure_cases() {
        let a = vec![(10.0, 2.0), (4.0, 0.0)];
        let b = vec![(5.0, 1.0)];
        assert_eq!(max_pressure_decide(&[a, b]), SignalAction::Select(0));
        assert_eq!(max_pressure_decide(&[vec![(0.0, 0.0)], vec![(0.0, 0.0)]]), SignalAction::Select(0));
        assert_eq!(max_pressure_decide(&[vec![(1.0, 9.0)], vec![(0.0, 2.0)]]), SignalAction::Select(1));
    }

    #[test]
    fn max_queue_first_cases() {
        assert_eq!(max_queue_first_decide(&[3.0, 7.0, 2.0]), SignalAction::Select(1));
        assert_eq!(max_queue_first_decide(&[5.0, 5.0]), SignalAction::Select(0));
        assert_eq!(max_queue_first_decide(&[10.0, 4.0]), SignalAction::Select(0));
    }
}
