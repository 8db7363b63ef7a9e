//! Builds the factored observation `[s_c, s_m, d, b_d]` of one intersection.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::belief::DemandBelief;
use crate::network::Network;
use crate::signal::SignalMode;
use crate::sim::SimState;

/// How much of the world the observation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignLevel {
    /// Controlled intersection only.
    L1,
    /// Controlled intersection plus boundary demand counts.
    L2,
    /// Controlled intersection plus modelled neighbours.
    L3,
    /// Controlled intersection, neighbours and a demand belief.
    L4,
}

impl DesignLevel {
    pub fn has_demand(self) -> bool {
        self == DesignLevel::L2
    }

    pub fn has_neighbors(self) -> bool {
        matches!(self, DesignLevel::L3 | DesignLevel::L4)
    }

    pub fn has_belief(self) -> bool {
        self == DesignLevel::L4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub intersection: usize,
    /// Neighbours up to this many links away form `s_m`.
    pub neighbor_hops: usize,
    pub level: DesignLevel,
    /// The neighbours completely surround the controlled intersection, so
    /// outside demand reaches it only through them; boundary readings are
    /// then taken where traffic enters the neighbourhood.
    pub encircled: bool,
}

impl BoundaryConfig {
    pub fn new(intersection: usize, level: DesignLevel) -> Self {
        Self { intersection, neighbor_hops: 1, level, encircled: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionFeatures {
    pub intersection: usize,
    /// Queued vehicles per lane, incoming links in network order.
    pub queues: Vec<f64>,
    pub phase: usize,
    pub mode: SignalMode,
    /// Steps spent in the current mode.
    pub elapsed: u32,
    /// Elapsed green over max green; 0 outside green.
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredState {
    pub level: DesignLevel,
    pub controlled: IntersectionFeatures,
    pub neighbors: Vec<IntersectionFeatures>,
    /// Vehicles that entered each boundary link during the last step.
    pub demand: Option<Vec<f64>>,
    /// One belief per boundary link.
    pub belief: Option<Vec<DemandBelief>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObserveError {
    #[error("intersection {0} does not exist")]
    UnknownIntersection(usize),
    #[error("design level needs a demand belief")]
    MissingBelief,
    #[error("expected {expected} beliefs, one per boundary link, got {got}")]
    BeliefCount { expected: usize, got: usize },
}

pub fn intersection_features(net: &Network, state: &SimState, i: usize) -> IntersectionFeatures {
    let sig = state.signals[i];
    let queues = net.incoming(i).iter().flat_map(|&l| state.links[l].lanes.iter().map(|ln| ln.mass)).collect();
    let progress = if sig.mode == SignalMode::Green { (f64::from(sig.elapsed) / f64::from(net.timing(i).max_green)).min(1.0) } else { 0.0 };
    IntersectionFeatures { intersection: i, queues, phase: sig.phase, mode: sig.mode, elapsed: sig.elapsed, progress }
}

/// Links carrying traffic into the observed region from outside it.
pub fn boundary_links(net: &Network, cfg: &BoundaryConfig) -> Vec<usize> {
    let mut region = alloc::vec![cfg.intersection];
    if cfg.encircled {
        region.extend(net.neighbors_within(cfg.intersection, cfg.neighbor_hops));
    }
    let mut out: Vec<usize> =
        region.iter().flat_map(|&i| net.incoming(i).iter().copied()).filter(|&l| net.link(l).from.is_none_or(|u| !region.contains(&u))).collect();
    out.sort_unstable();
    out
}

pub fn observe(net: &Network, state: &SimState, cfg: &BoundaryConfig, beliefs: Option<&[DemandBelief]>) -> Result<FactoredState, ObserveError> {
    let i = cfg.intersection;
    if i >= net.n_intersections() {
        return Err(ObserveError::UnknownIntersection(i));
    }
    let controlled = intersection_features(net, state, i);
    let neighbors = if cfg.level.has_neighbors() {
        net.neighbors_within(i, cfg.neighbor_hops).into_iter().map(|j| intersection_features(net, state, j)).collect()
    } else {
        Vec::new()
    };
    let boundary = boundary_links(net, cfg);
    let demand = cfg.level.has_demand().then(|| boundary.iter().map(|&l| state.links[l].inflow).collect());
    let belief = if cfg.level.has_belief() {
        let b = beliefs.ok_or(ObserveError::MissingBelief)?;
        if b.len() != boundary.len() {
            return Err(ObserveError::BeliefCount { expected: boundary.len(), got: b.len() });
        }
        Some(b.to_vec())
    } else {
        None
    };
    Ok(FactoredState { level: cfg.level, controlled, neighbors, demand, belief })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandProfile;
    use crate::network::presets::{corridor, single_cross, ApproachParams};
    use crate::rng::{stream, StreamRole};
    use crate::signal::{ControlMode, SignalAction};
    use crate::sim::{step, Arrivals, SimConfig};
    use alloc::vec;

    fn cross() -> (Network, SimConfig, SimState) {
        let cfg = SimConfig::default();
        let net = Network::new(single_cross(ApproachParams::default(), 5.0, 60.0), &cfg).unwrap();
        let demand = DemandProfile::uniform(&net, 0.0).unwrap();
        let st = SimState::new(&net, &cfg, &demand, vec![ControlMode::Fps], stream(1, 0, StreamRole::Simulation)).unwrap();
        (net, cfg, st)
    }

    #[test]
    fn empty_l1() {
        let (net, _, st) = cross();
        let fs = observe(&net, &st, &BoundaryConfig::new(0, DesignLevel::L1), None).unwrap();
        assert_eq!(fs.controlled.queues, vec![0.0, 0.0]);
        assert_eq!((fs.controlled.phase, fs.controlled.progress), (0, 0.0));
        assert!(fs.demand.is_none() && fs.neighbors.is_empty() && fs.belief.is_none());
    }

    #[test]
    fn l2_counts_last_step_entries() {
        let (net, cfg, mut st) = cross();
        step(&net, &cfg, &mut st, &[SignalAction::Extend], Arrivals::Given(&[3.0, 0.0])).unwrap();
        let fs = observe(&net, &st, &BoundaryConfig::new(0, DesignLevel::L2), None).unwrap();
        assert_eq!(fs.demand, Some(vec![3.0, 0.0]));
    }

    #[test]
    fn l4_passes_belief_through() {
        let (net, _, st) = cross();
        let b = DemandBelief::uniform(vec![0.1, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
        let bs = vec![b.clone(), b.clone()];
        let fs = observe(&net, &st, &BoundaryConfig::new(0, DesignLevel::L4), Some(&bs)).unwrap();
        assert_eq!(fs.belief.unwrap()[0].probs(), &[0.5, 0.5]);
        assert_eq!(observe(&net, &st, &BoundaryConfig::new(0, DesignLevel::L4), None), Err(ObserveError::MissingBelief));
        assert_eq!(observe(&net, &st, &BoundaryConfig::new(3, DesignLevel::L1), None), Err(ObserveError::UnknownIntersection(3)));
    }

    #[test]
    fn encircled_moves_the_boundary() {
        let cfg = SimConfig::default();
        let net = Network::new(corridor(3, ApproachParams::default(), ApproachParams::default(), 5.0, 60.0), &cfg).unwrap();
        let open = BoundaryConfig::new(1, DesignLevel::L2);
        let names = |ls: Vec<usize>| ls.into_iter().map(|l| net.link(l).id.clone()).collect::<Vec<_>>();
        assert_eq!(names(boundary_links(&net, &open)), vec!["A1", "S1"]);
        let closed = BoundaryConfig { encircled: true, ..open };
        assert_eq!(names(boundary_links(&net, &closed)), vec!["A0", "S0", "S1", "S2"]);
    }
}
