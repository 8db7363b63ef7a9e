//! Evaluation criteria at intersection, network and arterial level.
//!
//! Naming follows the convention where "delay" means stop time (time spent
//! at or below the stop-speed threshold), so queue length, stop time and
//! delay coincide per step. The traditional notion, time lost relative to
//! free-flow travel, is called *actual delay* here.
//!
//! The detection area of an intersection is the whole of each incoming link.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::network::Network;
use crate::signal::{CyclePlan, SignalMode};
use crate::sim::{FlowModel, SimConfig, SimState, StepEvents, VehicleRecord};

/// Weights of `Cost = a·Q + b·NS`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCoefficients {
    pub a: f64,
    pub b: f64,
}

impl Default for CostCoefficients {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

/// Per-step criteria of one intersection.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Q^t: vehicles at or below the stop-speed threshold.
    pub queue: f64,
    /// AD^t = τ·Σ (v* − v̄_i)/v*.
    pub actual_delay: f64,
    /// NS^t: stops taken during the step.
    pub stops: f64,
    /// CD^t: accumulated stop time of vehicles currently in the detection area.
    pub cumulative_delay: f64,
    /// VC^t: vehicles on the incoming links.
    pub vehicle_count: f64,
    /// CTT^t: accumulated travel time of vehicles currently in the detection area.
    pub cumulative_travel_time: f64,
    /// DCD^t = CD^t − CD^{t−1}.
    pub delta_cumulative_delay: f64,
    /// Cost^t = a·Q^t + b·NS^t.
    pub cost: f64,
}

/// Which per-step criterion a controller optimises or a learner is rewarded by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Queue,
    ActualDelay,
    Stops,
    CumulativeDelay,
    VehicleCount,
    CumulativeTravelTime,
    DeltaCumulativeDelay,
    Cost,
}

impl StepMetrics {
    pub fn get(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Queue => self.queue,
            Criterion::ActualDelay => self.actual_delay,
            Criterion::Stops => self.stops,
            Criterion::CumulativeDelay => self.cumulative_delay,
            Criterion::VehicleCount => self.vehicle_count,
            Criterion::CumulativeTravelTime => self.cumulative_travel_time,
            Criterion::DeltaCumulativeDelay => self.delta_cumulative_delay,
            Criterion::Cost => self.cost,
        }
    }
}

/// What the criteria need to know about one vehicle in the detection area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSample {
    /// Mean speed over the last step.
    pub speed: f64,
    pub free_flow_speed: f64,
    pub stops_last_step: u32,
    pub link_delay_s: f64,
    pub link_time_s: f64,
}

impl VehicleSample {
    pub fn from_record(v: &VehicleRecord, free_flow_speed: f64) -> Self {
        Self { speed: v.speed, free_flow_speed, stops_last_step: v.stops_last_step, link_delay_s: v.link_delay_s, link_time_s: v.link_time_s }
    }
}

/// The eight intersection criteria over an explicit vehicle set.
pub fn step_metrics_from_samples(
    samples: &[VehicleSample],
    stop_speed: f64,
    step_s: f64,
    prev_cumulative_delay: f64,
    coeffs: CostCoefficients,
) -> StepMetrics {
    let mut m = StepMetrics::default();
    let mut loss = 0.0;
    for v in samples {
        if v.speed <= stop_speed {
            m.queue += 1.0;
        }
        loss += (v.free_flow_speed - v.speed) / v.free_flow_speed;
        m.stops += f64::from(v.stops_last_step);
        m.cumulative_delay += v.link_delay_s;
        m.cumulative_travel_time += v.link_time_s;
    }
    m.actual_delay = step_s * loss;
    m.vehicle_count = samples.len() as f64;
    m.delta_cumulative_delay = m.cumulative_delay - prev_cumulative_delay;
    m.cost = coeffs.a * m.queue + coeffs.b * m.stops;
    m
}

/// Vehicles currently on the incoming links of intersection `i`.
pub fn detection_samples(net: &Network, state: &SimState, i: usize) -> Vec<VehicleSample> {
    let mut out = Vec::new();
    for &l in net.incoming(i) {
        let vstar = net.link(l).free_flow_speed;
        let ls = &state.links[l];
        let ids = ls.lanes.iter().flat_map(|ln| ln.vehicles.iter()).chain(ls.transit.iter().flat_map(|b| b.vehicles.iter()));
        for id in ids {
            out.push(VehicleSample::from_record(&state.vehicles[*id as usize], vstar));
        }
    }
    out
}

/// Criteria of intersection `i` after the last step.
///
/// In the fluid model there are no vehicle identities: queued mass is
/// stopped, in-transit mass moves at v*, and the stop/cumulative criteria
/// read 0.
pub fn intersection_step_metrics(
    net: &Network,
    cfg: &SimConfig,
    state: &SimState,
    i: usize,
    prev_cumulative_delay: f64,
    coeffs: CostCoefficients,
) -> StepMetrics {
    match state.flow {
        FlowModel::Vehicles => {
            let samples = detection_samples(net, state, i);
            step_metrics_from_samples(&samples, cfg.stop_speed, cfg.step_s, prev_cumulative_delay, coeffs)
        }
        FlowModel::Fluid => fluid_step_metrics(net, cfg, state, i, coeffs),
    }
}

fn fluid_step_metrics(net: &Network, cfg: &SimConfig, state: &SimState, i: usize, coeffs: CostCoefficients) -> StepMetrics {
    let mut m = StepMetrics::default();
    for &l in net.incoming(i) {
        let ls = &state.links[l];
        m.queue += ls.queue();
        m.vehicle_count += ls.occupancy();
    }
    m.actual_delay = cfg.step_s * m.queue;
    m.cost = coeffs.a * m.queue;
    m
}

/// Keeps CD^{t−1} per intersection so DCD can be reported step by step.
#[derive(Debug, Clone, Default)]
pub struct MetricsRecorder {
    prev_cd: Vec<f64>,
    pub coeffs: CostCoefficients,
}

impl MetricsRecorder {
    pub fn new(n_intersections: usize, coeffs: CostCoefficients) -> Self {
        Self { prev_cd: alloc::vec![0.0; n_intersections], coeffs }
    }

    pub fn record(&mut self, net: &Network, cfg: &SimConfig, state: &SimState) -> Vec<StepMetrics> {
        (0..net.n_intersections())
            .map(|i| {
                let m = intersection_step_metrics(net, cfg, state, i, self.prev_cd[i], self.coeffs);
                self.prev_cd[i] = m.cumulative_delay;
                m
            })
            .collect()
    }
}

/// Network-level criteria over completed trips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Average travel time; absent when no trip completed.
    pub att: Option<f64>,
    /// Average delay (stop time); absent when no trip completed.
    pub ad: Option<f64>,
    pub throughput: usize,
}

pub fn network_episode_metrics<'a, I>(records: I) -> EpisodeMetrics
where
    I: IntoIterator<Item = &'a VehicleRecord>,
{
    let mut n = 0usize;
    let mut tt = 0.0;
    let mut d = 0.0;
    for r in records.into_iter().filter(|r| r.exit_step.is_some()) {
        n += 1;
        tt += r.travel_time_s;
        d += r.delay_s;
    }
    if n == 0 {
        return EpisodeMetrics { att: None, ad: None, throughput: 0 };
    }
    EpisodeMetrics { att: Some(tt / n as f64), ad: Some(d / n as f64), throughput: n }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ArterialError {
    #[error("denominator is zero")]
    ZeroDenominator,
    #[error("all plans on a corridor must share one cycle length")]
    MixedCycleLengths,
    #[error("corridor needs one spacing fewer than signals")]
    Spacing,
}

/// R_p = f_g / f from flow rates during green and over the whole cycle.
pub fn platoon_ratio_from_flows(green_flow: f64, cycle_flow: f64) -> Result<f64, ArterialError> {
    if cycle_flow == 0.0 {
        return Err(ArterialError::ZeroDenominator);
    }
    Ok(green_flow / cycle_flow)
}

/// R_p = P / (g/c) from the share of arrivals on green and the green ratio.
pub fn platoon_ratio_from_shares(arrivals_on_green: f64, green_ratio: f64) -> Result<f64, ArterialError> {
    if green_ratio == 0.0 {
        return Err(ArterialError::ZeroDenominator);
    }
    Ok(arrivals_on_green / green_ratio)
}

/// Platoon ratios anchoring arrival types 1 to 6.
pub const ARRIVAL_TYPE_ANCHORS: [f64; 6] = [0.333, 0.667, 1.000, 1.333, 1.667, 2.000];

/// Arrival type of the nearest anchor; exact midpoints go to the higher
/// type and values outside the anchor range clamp to 1 or 6.
pub fn arrival_type(platoon_ratio: f64) -> u8 {
    let mut kind = 1u8;
    for w in ARRIVAL_TYPE_ANCHORS.windows(2) {
        if platoon_ratio >= (w[0] + w[1]) / 2.0 {
            kind += 1;
        }
    }
    kind
}

/// Accumulates stop-line arrivals per link split by whether the link's
/// movements had green (or yellow) at the time.
#[derive(Debug, Clone, Default)]
pub struct PlatoonCounter {
    open_steps: Vec<u64>,
    total_steps: u64,
    arrivals_open: Vec<f64>,
    arrivals: Vec<f64>,
}

impl PlatoonCounter {
    pub fn new(net: &Network) -> Self {
        let n = net.n_links();
        Self { open_steps: alloc::vec![0; n], total_steps: 0, arrivals_open: alloc::vec![0.0; n], arrivals: alloc::vec![0.0; n] }
    }

    pub fn observe(&mut self, net: &Network, ev: &StepEvents) {
        self.total_steps += 1;
        for l in 0..net.n_links() {
            let Some(i) = net.link(l).to else { continue };
            let sig = ev.signals[i];
            let open = matches!(sig.mode, SignalMode::Green | SignalMode::Yellow)
                && net.phase_movements(i, sig.phase).iter().any(|&m| net.movement(m).in_link == l);
            if open {
                self.open_steps[l] += 1;
                self.arrivals_open[l] += ev.matured[l];
            }
            self.arrivals[l] += ev.matured[l];
        }
    }

    /// R_p of link `l`, if it saw both arrivals and green.
    pub fn platoon_ratio(&self, l: usize) -> Option<f64> {
        if self.arrivals[l] == 0.0 || self.open_steps[l] == 0 {
            return None;
        }
        let share = self.arrivals_open[l] / self.arrivals[l];
        let g_over_c = self.open_steps[l] as f64 / self.total_steps as f64;
        platoon_ratio_from_shares(share, g_over_c).ok()
    }
}

/// One signal of a corridor: its plan and the plan entry serving the arterial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorSignal {
    pub plan: CyclePlan,
    pub arterial_entry: usize,
    /// Yellow plus all-red at the end of the split, seconds.
    pub change_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// From the first signal towards the last.
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenBand {
    pub width_s: f64,
    pub efficiency_pct: f64,
}

/// Width of the through band: the set of departure times (mod C) at the
/// first signal in `direction` from which a platoon at `speed` meets green
/// at every signal.
pub fn green_band(signals: &[CorridorSignal], spacings_m: &[f64], speed: f64, direction: Direction) -> Result<GreenBand, ArterialError> {
    let Some(first) = signals.first() else {
        return Ok(GreenBand { width_s: 0.0, efficiency_pct: 0.0 });
    };
    if spacings_m.len() + 1 != signals.len() {
        return Err(ArterialError::Spacing);
    }
    let c = first.plan.cycle_s;
    if signals.iter().any(|s| libm::fabs(s.plan.cycle_s - c) > 1e-9) {
        return Err(ArterialError::MixedCycleLengths);
    }
    let mut position = alloc::vec![0.0; signals.len()];
    for k in 1..signals.len() {
        position[k] = position[k - 1] + spacings_m[k - 1];
    }
    let total = *position.last().unwrap_or(&0.0);
    let mut band: Vec<(f64, f64)> = alloc::vec![(0.0, c)];
    for (k, s) in signals.iter().enumerate() {
        let distance = match direction {
            Direction::Forward => position[k],
            Direction::Backward => total - position[k],
        };
        let travel = distance / speed;
        let start_in_cycle: f64 = s.plan.splits_s[..s.arterial_entry].iter().sum();
        let green = s.plan.green_s(s.arterial_entry, s.change_s);
        let window = arc(s.plan.offset_s + start_in_cycle - travel, green, c);
        band = intersect(&band, &window);
    }
    let width: f64 = band.iter().map(|(a, b)| b - a).sum();
    Ok(GreenBand { width_s: width, efficiency_pct: width / c * 100.0 })
}

/// An arc of length `len` starting at `start` on a circle of circumference
/// `c`, as disjoint intervals of `[0, c)`.
fn arc(start: f64, len: f64, c: f64) -> Vec<(f64, f64)> {
    if len >= c {
        return alloc::vec![(0.0, c)];
    }
    if len <= 0.0 {
        return Vec::new();
    }
    let s = math::rem_euclid(start, c);
    let e = s + len;
    if e <= c {
        alloc::vec![(s, e)]
    } else {
        alloc::vec![(s, c), (0.0, e - c)]
    }
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(a0, a1) in a {
        for &(b0, b1) in b {
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                out.push((lo, hi));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(speed: f64) -> VehicleSample {
        VehicleSample { speed, free_flow_speed: 20.0, stops_last_step: 0, link_delay_s: 0.0, link_time_s: 0.0 }
    }

    #[test]
    fn stopped_vehicles_are_queued() {
        let m = step_metrics_from_samples(&[sample(0.0), sample(1.0), sample(2.0)], 2.0, 1.0, 0.0, CostCoefficients::default());
        assert_eq!(m.queue, 3.0);
    }

    #[test]
    fn actual_delay_formula() {
        let m = step_metrics_from_samples(&[sample(10.0), sample(20.0)], 2.0, 1.0, 0.0, CostCoefficients::default());
        assert_eq!(m.actual_delay, 0.5);
    }

    #[test]
    fn delta_and_cost() {
        let mut a = sample(0.0);
        a.link_delay_s = 12.0;
        a.stops_last_step = 1;
        let m = step_metrics_from_samples(&[a], 2.0, 1.0, 10.0, CostCoefficients { a: 2.0, b: 3.0 });
        assert_eq!(m.delta_cumulative_delay, 2.0);
        assert_eq!(m.cost, 2.0 * 1.0 + 3.0 * 1.0);
    }

    fn rec(tt: f64, d: f64, done: bool) -> VehicleRecord {
        VehicleRecord {
            id: 0,
            entry_step: 0,
            exit_step: done.then_some(1),
            delay_s: d,
            travel_time_s: tt,
            stops: 0,
            speed: 0.0,
            stops_last_step: 0,
            link_delay_s: 0.0,
            link_time_s: 0.0,
            link: None,
        }
    }

    #[test]
    fn episode_means_and_empty_set() {
        let r = [rec(100.0, 10.0, true), rec(200.0, 30.0, true), rec(5.0, 5.0, false)];
        let e = network_episode_metrics(&r);
        assert_eq!(e.att, Some(150.0));
        assert_eq!(e.ad, Some(20.0));
        assert_eq!(e.throughput, 2);
        let e = network_episode_metrics(&[rec(5.0, 1.0, false)]);
        assert_eq!((e.att, e.ad, e.throughput), (None, None, 0));
    }

    #[test]
    fn platoon_ratio_forms() {
        assert_eq!(platoon_ratio_from_shares(0.5, 0.5), Ok(1.0));
        assert_eq!(platoon_ratio_from_flows(800.0, 400.0), Ok(2.0));
        assert_eq!(platoon_ratio_from_flows(1.0, 0.0), Err(ArterialError::ZeroDenominator));
        assert_eq!(arrival_type(2.0), 6);
    }

    #[test]
    fn arrival_type_anchors_and_clamp() {
        let types: Vec<u8> = ARRIVAL_TYPE_ANCHORS.iter().map(|r| arrival_type(*r)).collect();
        assert_eq!(types, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(arrival_type(2.4), 6);
        assert_eq!(arrival_type(0.0), 1);
        assert_eq!(arrival_type(0.5), 2); // midpoint rounds up
    }

    fn plan(green: f64, offset: f64) -> CorridorSignal {
        CorridorSignal {
            plan: CyclePlan { phases: vec![0, 1], splits_s: vec![green, 60.0 - green], cycle_s: 60.0, offset_s: offset },
            arterial_entry: 0,
            change_s: 0.0,
        }
    }

    #[test]
    fn single_signal_band() {
        let b = green_band(&[plan(30.0, 0.0)], &[], 10.0, Direction::Forward).unwrap();
        assert_eq!((b.width_s, b.efficiency_pct), (30.0, 50.0));
    }

    #[test]
    fn offset_matching_travel_time_keeps_full_band() {
        // 200 m at 10 m/s = 20 s
        let b = green_band(&[plan(30.0, 0.0), plan(30.0, 20.0)], &[200.0], 10.0, Direction::Forward).unwrap();
        assert_eq!(b.width_s, 30.0);
        let b = green_band(&[plan(30.0, 0.0), plan(30.0, 50.0)], &[200.0], 10.0, Direction::Forward).unwrap();
        assert_eq!(b.width_s, 0.0);
        assert_eq!(b.efficiency_pct, 0.0);
    }

    #[test]
    fn mixed_cycles_rejected() {
        let mut other = plan(30.0, 0.0);
        other.plan.cycle_s = 90.0;
        other.plan.splits_s = vec![30.0, 60.0];
        assert_eq!(green_band(&[plan(30.0, 0.0), other], &[100.0], 10.0, Direction::Forward), Err(ArterialError::MixedCycleLengths));
    }
}
