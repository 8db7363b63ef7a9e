//! Static network topology: links, movements, phases and phasing schemes.
//!
//! [`NetworkSpec`] is the plain description (what a scenario file holds);
//! [`Network`] is the validated form with the derived lookup tables the
//! simulator needs (per-link lanes, free-flow lags in steps, scheme timings in
//! steps).

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::sim::SimConfig;

/// A directed road segment. `from`/`to` name intersections by index; `None`
/// means the network boundary (a demand source upstream, a sink downstream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub from: Option<usize>,
    pub to: Option<usize>,
    pub length_m: f64,
    pub free_flow_speed: f64,
    /// Saturation discharge rate per movement lane, veh/s.
    pub saturation_rate: f64,
    /// Storage capacity of the whole link, vehicles.
    pub capacity: u32,
}

/// A connection from an incoming link to an outgoing link (or out of the network).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovementSpec {
    pub id: String,
    pub in_link: usize,
    pub out_link: Option<usize>,
    /// Share of the in-link's traffic that takes this movement. Normalised per link.
    pub turn_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub id: String,
    pub movements: Vec<usize>,
}

/// Ordered candidate phases and the timing constraints of one intersection.
/// Durations are seconds; `None` change intervals fall back to [`SimConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasingScheme {
    pub phases: Vec<usize>,
    pub yellow_s: Option<f64>,
    pub all_red_s: Option<f64>,
    pub min_green_s: f64,
    pub max_green_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSpec {
    pub id: String,
    pub scheme: PhasingScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct NetworkSpec {
    pub intersections: Vec<IntersectionSpec>,
    pub links: Vec<LinkSpec>,
    pub movements: Vec<MovementSpec>,
    pub phases: Vec<PhaseSpec>,
    /// Movement pairs that may never be green together.
    pub conflicts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("{what} index {index} is out of range")]
    BadIndex { what: &'static str, index: usize },
    #[error("link {0}: length, speed and saturation rate must be positive and capacity at least 1")]
    BadLink(String),
    #[error("link {0} ends at an intersection but has no movements")]
    LinkWithoutMovements(String),
    #[error("link {0} leaves the network but has movements")]
    ExitLinkWithMovements(String),
    #[error("movement {0} does not belong to any phase")]
    MovementWithoutPhase(String),
    #[error("movement {movement} is not routed through intersection {intersection}")]
    MovementTopology { movement: String, intersection: String },
    #[error("phase {phase} contains conflicting movements {a} and {b}")]
    ConflictInPhase { phase: String, a: String, b: String },
    #[error("phase {0} is used by more than one intersection or by none")]
    PhaseOwnership(String),
    #[error("intersection {0} has an empty phasing scheme")]
    EmptyScheme(String),
    #[error("intersection {0}: min green exceeds max green")]
    MinAboveMax(String),
    #[error("intersection {id}: {what} = {value} s is not a positive multiple of the step length")]
    Duration { id: String, what: &'static str, value: f64 },
    #[error("link {0}: turn ratios must be non-negative with a positive sum")]
    TurnRatios(String),
}

/// Scheme timings in whole simulation steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSteps {
    pub yellow: u32,
    pub all_red: u32,
    pub min_green: u32,
    pub max_green: u32,
}

impl SchemeSteps {
    pub fn change_interval(&self) -> u32 {
        self.yellow + self.all_red
    }
}

/// A validated network with derived tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    step_s: f64,
    timings: Vec<SchemeSteps>,
    lag: Vec<u32>,
    lanes: Vec<Vec<usize>>,
    lane_of: Vec<usize>,
    turn: Vec<f64>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    phase_owner: Vec<usize>,
    entry_links: Vec<usize>,
    exit_links: Vec<usize>,
}

impl Network {
    pub fn new(spec: NetworkSpec, cfg: &SimConfig) -> Result<Self, NetworkError> {
        let tau = cfg.step_s;
        let n_int = spec.intersections.len();
        let n_links = spec.links.len();
        let n_mov = spec.movements.len();
        let n_ph = spec.phases.len();

        let check = |what: &'static str, index: usize, len: usize| {
            if index < len {
                Ok(())
            } else {
                Err(NetworkError::BadIndex { what, index })
            }
        };

        for l in &spec.links {
            if let Some(i) = l.from {
                check("intersection", i, n_int)?;
            }
            if let Some(i) = l.to {
                check("intersection", i, n_int)?;
            }
            let ok = l.length_m > 0.0
                && l.free_flow_speed > 0.0
                && l.saturation_rate > 0.0
                && l.capacity >= 1
                && l.length_m.is_finite()
                && l.free_flow_speed.is_finite()
                && l.saturation_rate.is_finite();
            if !ok {
                return Err(NetworkError::BadLink(l.id.clone()));
            }
        }
        for m in &spec.movements {
            check("link", m.in_link, n_links)?;
            if let Some(o) = m.out_link {
                check("link", o, n_links)?;
            }
        }
        for p in &spec.phases {
            for &m in &p.movements {
                check("movement", m, n_mov)?;
            }
        }
        for &(a, b) in &spec.conflicts {
            check("movement", a, n_mov)?;
            check("movement", b, n_mov)?;
        }

        // Phase ownership: each phase is listed by exactly one scheme.
        let mut phase_owner = alloc::vec![usize::MAX; n_ph];
        for (i, int) in spec.intersections.iter().enumerate() {
            if int.scheme.phases.is_empty() {
                return Err(NetworkError::EmptyScheme(int.id.clone()));
            }
            for &p in &int.scheme.phases {
                check("phase", p, n_ph)?;
                if phase_owner[p] != usize::MAX {
                    return Err(NetworkError::PhaseOwnership(spec.phases[p].id.clone()));
                }
                phase_owner[p] = i;
            }
        }
        if let Some(p) = phase_owner.iter().position(|&o| o == usize::MAX) {
            return Err(NetworkError::PhaseOwnership(spec.phases[p].id.clone()));
        }

        // Movements: routed through the owning intersection, in at least one phase.
        let mut in_phase = alloc::vec![false; n_mov];
        for (p, ph) in spec.phases.iter().enumerate() {
            let owner = phase_owner[p];
            for &m in &ph.movements {
                in_phase[m] = true;
                let mv = &spec.movements[m];
                let in_to = spec.links[mv.in_link].to;
                let out_from = mv.out_link.map(|o| spec.links[o].from);
                if in_to != Some(owner) || matches!(out_from, Some(f) if f != Some(owner)) {
                    return Err(NetworkError::MovementTopology { movement: mv.id.clone(), intersection: spec.intersections[owner].id.clone() });
                }
            }
        }
        if let Some(m) = in_phase.iter().position(|x| !x) {
            return Err(NetworkError::MovementWithoutPhase(spec.movements[m].id.clone()));
        }

        let conflicting = |a: usize, b: usize| spec.conflicts.iter().any(|&(x, y)| (x == a && y == b) || (x == b && y == a));
        for ph in &spec.phases {
            for (k, &a) in ph.movements.iter().enumerate() {
                for &b in &ph.movements[k + 1..] {
                    if conflicting(a, b) {
                        return Err(NetworkError::ConflictInPhase {
                            phase: ph.id.clone(),
                            a: spec.movements[a].id.clone(),
                            b: spec.movements[b].id.clone(),
                        });
                    }
                }
            }
        }

        let mut timings = Vec::with_capacity(n_int);
        for int in &spec.intersections {
            let s = &int.scheme;
            let yellow = s.yellow_s.unwrap_or(cfg.default_yellow_s);
            let all_red = s.all_red_s.unwrap_or(cfg.default_all_red_s);
            let as_steps = |what: &'static str, value: f64| {
                if value.is_finite() && math::is_multiple_of(value, tau) {
                    Ok(math::steps_of(value, tau))
                } else {
                    Err(NetworkError::Duration { id: int.id.clone(), what, value })
                }
            };
            let t = SchemeSteps {
                yellow: as_steps("yellow", yellow)?,
                all_red: as_steps("all-red", all_red)?,
                min_green: as_steps("min green", s.min_green_s)?,
                max_green: as_steps("max green", s.max_green_s)?,
            };
            if t.min_green > t.max_green {
                return Err(NetworkError::MinAboveMax(int.id.clone()));
            }
            timings.push(t);
        }

        let mut lanes = alloc::vec![Vec::new(); n_links];
        let mut lane_of = alloc::vec![0; n_mov];
        for (m, mv) in spec.movements.iter().enumerate() {
            lane_of[m] = lanes[mv.in_link].len();
            lanes[mv.in_link].push(m);
        }
        let mut turn = alloc::vec![0.0; n_mov];
        for (l, link) in spec.links.iter().enumerate() {
            match (link.to, lanes[l].is_empty()) {
                (Some(_), true) => return Err(NetworkError::LinkWithoutMovements(link.id.clone())),
                (None, false) => return Err(NetworkError::ExitLinkWithMovements(link.id.clone())),
                _ => {}
            }
            let total: f64 = lanes[l].iter().map(|&m| spec.movements[m].turn_ratio).sum();
            let bad = lanes[l].iter().any(|&m| !(spec.movements[m].turn_ratio >= 0.0) || !spec.movements[m].turn_ratio.is_finite());
            if !lanes[l].is_empty() && (bad || !(total > 0.0)) {
                return Err(NetworkError::TurnRatios(link.id.clone()));
            }
            for &m in &lanes[l] {
                turn[m] = spec.movements[m].turn_ratio / total;
            }
        }

        // Free-flow lag: whole steps needed to cover the link at v*.
        let lag = spec.links.iter().map(|l| math::floor(l.length_m / (l.free_flow_speed * tau) + 1e-9) as u32).collect();

        let mut incoming = alloc::vec![Vec::new(); n_int];
        let mut outgoing = alloc::vec![Vec::new(); n_int];
        let mut entry_links = Vec::new();
        let mut exit_links = Vec::new();
        for (l, link) in spec.links.iter().enumerate() {
            match link.to {
                Some(i) => incoming[i].push(l),
                None => exit_links.push(l),
            }
            match link.from {
                Some(i) => outgoing[i].push(l),
                None => entry_links.push(l),
            }
        }

        Ok(Self { spec, step_s: tau, timings, lag, lanes, lane_of, turn, incoming, outgoing, phase_owner, entry_links, exit_links })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn step_s(&self) -> f64 {
        self.step_s
    }

    pub fn n_intersections(&self) -> usize {
        self.spec.intersections.len()
    }

    pub fn n_links(&self) -> usize {
        self.spec.links.len()
    }

    pub fn n_movements(&self) -> usize {
        self.spec.movements.len()
    }

    pub fn link(&self, l: usize) -> &LinkSpec {
        &self.spec.links[l]
    }

    pub fn movement(&self, m: usize) -> &MovementSpec {
        &self.spec.movements[m]
    }

    pub fn scheme(&self, i: usize) -> &PhasingScheme {
        &self.spec.intersections[i].scheme
    }

    pub fn timing(&self, i: usize) -> SchemeSteps {
        self.timings[i]
    }

    /// Movements served when scheme position `pos` of intersection `i` is green.
    pub fn phase_movements(&self, i: usize, pos: usize) -> &[usize] {
        let p = self.spec.intersections[i].scheme.phases[pos];
        &self.spec.phases[p].movements
    }

    pub fn n_phases(&self, i: usize) -> usize {
        self.spec.intersections[i].scheme.phases.len()
    }

    pub fn phase_owner(&self, p: usize) -> usize {
        self.phase_owner[p]
    }

    /// Free-flow traversal time of link `l`, in whole steps.
    pub fn lag(&self, l: usize) -> u32 {
        self.lag[l]
    }

    /// Movements leaving link `l`, in lane order.
    pub fn lanes(&self, l: usize) -> &[usize] {
        &self.lanes[l]
    }

    /// Lane position of movement `m` within its in-link.
    pub fn lane_of(&self, m: usize) -> usize {
        self.lane_of[m]
    }

    /// Normalised turn share of movement `m`.
    pub fn turn_share(&self, m: usize) -> f64 {
        self.turn[m]
    }

    pub fn incoming(&self, i: usize) -> &[usize] {
        &self.incoming[i]
    }

    pub fn outgoing(&self, i: usize) -> &[usize] {
        &self.outgoing[i]
    }

    pub fn entry_links(&self) -> &[usize] {
        &self.entry_links
    }

    pub fn exit_links(&self) -> &[usize] {
        &self.exit_links
    }

    pub fn conflicts(&self) -> &[(usize, usize)] {
        &self.spec.conflicts
    }

    pub fn intersection_index(&self, id: &str) -> Option<usize> {
        self.spec.intersections.iter().position(|x| x.id == id)
    }

    pub fn link_index(&self, id: &str) -> Option<usize> {
        self.spec.links.iter().position(|x| x.id == id)
    }

    /// Intersections reachable from `i` within `hops` link traversals (either direction), excluding `i`.
    pub fn neighbors_within(&self, i: usize, hops: usize) -> Vec<usize> {
        let n = self.n_intersections();
        let mut dist = alloc::vec![usize::MAX; n];
        dist[i] = 0;
        let mut frontier = alloc::vec![i];
        for d in 1..=hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for l in self.incoming[u].iter().chain(self.outgoing[u].iter()) {
                    let link = &self.spec.links[*l];
                    for v in [link.from, link.to].into_iter().flatten() {
                        if dist[v] == usize::MAX {
                            dist[v] = d;
                            next.push(v);
                        }
                    }
                }
            }
            frontier = next;
        }
        (0..n).filter(|&v| v != i && dist[v] != usize::MAX).collect()
    }
}

/// Small hand-built networks used by tests, fixtures and examples.
pub mod presets {
    use super::*;
    use alloc::format;
    use alloc::vec;

    /// Parameters shared by the preset builders.
    #[derive(Debug, Clone, Copy)]
    pub struct ApproachParams {
        pub length_m: f64,
        pub speed: f64,
        pub saturation: f64,
        pub capacity: u32,
    }

    impl Default for ApproachParams {
        fn default() -> Self {
            Self { length_m: 100.0, speed: 10.0, saturation: 0.5, capacity: 20 }
        }
    }

    /// One intersection with two conflicting approaches (`N` and `W`) that
    /// discharge straight out of the network. Phase 0 serves `N`, phase 1 serves `W`.
    pub fn single_cross(p: ApproachParams, min_green_s: f64, max_green_s: f64) -> NetworkSpec {
        let link = |id: &str, from, to| LinkSpec {
            id: id.into(),
            from,
            to,
            length_m: p.length_m,
            free_flow_speed: p.speed,
            saturation_rate: p.saturation,
            capacity: p.capacity,
        };
        NetworkSpec {
            intersections: vec![IntersectionSpec {
                id: "X".into(),
                scheme: PhasingScheme { phases: vec![0, 1], yellow_s: None, all_red_s: None, min_green_s, max_green_s },
            }],
            links: vec![link("N", None, Some(0)), link("W", None, Some(0))],
            movements: vec![
                MovementSpec { id: "N_thru".into(), in_link: 0, out_link: None, turn_ratio: 1.0 },
                MovementSpec { id: "W_thru".into(), in_link: 1, out_link: None, turn_ratio: 1.0 },
            ],
            phases: vec![PhaseSpec { id: "NS".into(), movements: vec![0] }, PhaseSpec { id: "EW".into(), movements: vec![1] }],
            conflicts: vec![(0, 1)],
        }
    }

    /// A corridor of `n` intersections along an east-west arterial. Each
    /// intersection has a side-street approach discharging to a sink; the
    /// arterial continues from one intersection to the next and leaves at the end.
    /// Phase 0 of every intersection serves the arterial, phase 1 the side street.
    pub fn corridor(n: usize, arterial: ApproachParams, side: ApproachParams, min_green_s: f64, max_green_s: f64) -> NetworkSpec {
        let mut spec = NetworkSpec::default();
        let mk = |id: String, from, to, p: ApproachParams| LinkSpec {
            id,
            from,
            to,
            length_m: p.length_m,
            free_flow_speed: p.speed,
            saturation_rate: p.saturation,
            capacity: p.capacity,
        };
        for i in 0..n {
            spec.intersections.push(IntersectionSpec {
                id: format!("I{i}"),
                scheme: PhasingScheme { phases: vec![2 * i, 2 * i + 1], yellow_s: None, all_red_s: None, min_green_s, max_green_s },
            });
        }
        // Arterial links: A0 (boundary -> I0), A1 (I0 -> I1), ..., An (I(n-1) -> exit).
        for k in 0..=n {
            let from = if k == 0 { None } else { Some(k - 1) };
            let to = if k == n { None } else { Some(k) };
            spec.links.push(mk(format!("A{k}"), from, to, arterial));
        }
        for i in 0..n {
            spec.links.push(mk(format!("S{i}"), None, Some(i), side));
        }
        for i in 0..n {
            let a = spec.movements.len();
            spec.movements.push(MovementSpec { id: format!("I{i}_arterial"), in_link: i, out_link: Some(i + 1), turn_ratio: 1.0 });
            let s = spec.movements.len();
            spec.movements.push(MovementSpec { id: format!("I{i}_side"), in_link: n + 1 + i, out_link: None, turn_ratio: 1.0 });
            spec.phases.push(PhaseSpec { id: format!("I{i}_P0"), movements: vec![a] });
            spec.phases.push(PhaseSpec { id: format!("I{i}_P1"), movements: vec![s] });
            spec.conflicts.push((a, s));
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;

    fn cfg() -> SimConfig {
        SimConfig::default()
    }

    #[test]
    fn single_cross_validates() {
        let net = Network::new(single_cross(ApproachParams::default(), 5.0, 60.0), &cfg()).unwrap();
        assert_eq!(net.entry_links(), &[0, 1]);
        assert_eq!(net.lag(0), 10);
        let t = net.timing(0);
        assert_eq!((t.yellow, t.all_red, t.min_green, t.max_green), (3, 2, 5, 60));
    }

    #[test]
    fn corridor_validates() {
        let net = Network::new(corridor(3, ApproachParams::default(), ApproachParams::default(), 5.0, 60.0), &cfg()).unwrap();
        assert_eq!(net.n_intersections(), 3);
        assert_eq!(net.neighbors_within(0, 1), alloc::vec![1]);
        assert_eq!(net.neighbors_within(0, 2), alloc::vec![1, 2]);
    }

    #[test]
    fn rejects_conflicting_phase() {
        let mut spec = single_cross(ApproachParams::default(), 5.0, 60.0);
        spec.phases[0].movements.push(1);
        assert!(matches!(Network::new(spec, &cfg()), Err(NetworkError::ConflictInPhase { .. })));
    }

    #[test]
    fn rejects_orphan_movement() {
        let mut spec = single_cross(ApproachParams::default(), 5.0, 60.0);
        spec.phases[1].movements.clear();
        assert!(matches!(Network::new(spec, &cfg()), Err(NetworkError::MovementWithoutPhase(_))));
    }

    #[test]
    fn rejects_min_above_max() {
        let spec = single_cross(ApproachParams::default(), 10.0, 5.0);
        assert!(matches!(Network::new(spec, &cfg()), Err(NetworkError::MinAboveMax(_))));
    }

    #[test]
    fn rejects_fractional_durations() {
        let spec = single_cross(ApproachParams::default(), 5.5, 60.0);
        assert!(matches!(Network::new(spec, &cfg()), Err(NetworkError::Duration { .. })));
        let mut c = cfg();
        c.step_s = 2.0;
        let spec = single_cross(ApproachParams::default(), 6.0, 60.0);
        // default yellow 3 s is not a multiple of 2 s
        assert!(matches!(Network::new(spec, &c), Err(NetworkError::Duration { .. })));
    }
}
