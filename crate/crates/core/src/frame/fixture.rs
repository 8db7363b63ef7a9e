//! A single-intersection scenario small enough to enumerate as an explicit
//! MDP, used as ground truth for the learners and planners.
//!
//! Two conflicting approaches, each an entry link of capacity 4 that is
//! traversed in less than one step, discharging straight out of the network
//! at 2 veh/s. Both approaches receive exactly one vehicle per step; arrivals
//! finding the link full are turned away. With yellow, all-red and min green
//! of one step and max green of three, the reachable state space is a few
//! hundred (queue, queue, signal) triples and transitions are deterministic.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::mdp::{MdpError, TabularMdp};
use crate::demand::DemandProfile;
use crate::network::presets::{single_cross, ApproachParams};
use crate::network::Network;
use crate::rng::{stream, StreamRole};
use crate::signal::{ControlMode, SignalAction, SignalState};
use crate::sim::{step, ArrivalProcess, Arrivals, BlockedArrivals, FlowModel, SimConfig, SimError, SimState};

pub const CAPACITY: u32 = 4;

/// Queued vehicles per approach and the signal state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixtureState {
    pub queues: Vec<u32>,
    pub signal: SignalState,
}

#[derive(Debug, Clone)]
pub struct TabularFixture {
    pub net: Network,
    pub cfg: SimConfig,
    pub demand: DemandProfile,
}

#[derive(Debug, Clone)]
pub struct EnumeratedMdp {
    pub mdp: TabularMdp,
    pub states: Vec<FixtureState>,
    pub index: BTreeMap<FixtureState, usize>,
}

impl TabularFixture {
    pub fn d13() -> Self {
        let cfg = SimConfig {
            step_s: 1.0,
            default_yellow_s: 1.0,
            default_all_red_s: 1.0,
            horizon: 200,
            flow: FlowModel::Vehicles,
            arrivals: ArrivalProcess::Expected,
            blocked: BlockedArrivals::Reject,
            ..SimConfig::default()
        };
        let p = ApproachParams { length_m: 5.0, speed: 10.0, saturation: 2.0, capacity: CAPACITY };
        let net = Network::new(single_cross(p, 1.0, 3.0), &cfg).expect("fixture network is valid");
        let demand = DemandProfile::uniform(&net, 1.0).expect("fixture demand is valid");
        Self { net, cfg, demand }
    }

    /// A fresh simulator state holding `s`.
    pub fn sim_state(&self, s: &FixtureState, seed: u64) -> SimState {
        let mut st = SimState::new(&self.net, &self.cfg, &self.demand, alloc::vec![ControlMode::Fps], stream(seed, 0, StreamRole::Simulation))
            .expect("fixture config is valid");
        for (m, q) in s.queues.iter().enumerate() {
            st.load_queue(&self.net, m, f64::from(*q));
        }
        st.signals[0] = s.signal;
        st
    }

    pub fn state_of(&self, st: &SimState) -> FixtureState {
        let queues = st.links.iter().map(|l| l.queue() as u32).collect();
        FixtureState { queues, signal: st.signals[0] }
    }

    /// One simulator step from `s` under FPS action `a`: next state and
    /// reward, the negated queue after the step.
    pub fn transition(&self, s: &FixtureState, a: usize) -> Result<(FixtureState, f64), SimError> {
        let mut st = self.sim_state(s, 0);
        step(&self.net, &self.cfg, &mut st, &[SignalAction::from_fps_index(a)], Arrivals::FromProfile(&self.demand))?;
        let queue: f64 = st.links.iter().map(|l| l.queue()).sum();
        Ok((self.state_of(&st), -queue))
    }

    /// Every (queue, queue) pair with the initial signal state.
    pub fn start_states(&self) -> Vec<FixtureState> {
        let mut out = Vec::new();
        for q0 in 0..=CAPACITY {
            for q1 in 0..=CAPACITY {
                out.push(FixtureState { queues: alloc::vec![q0, q1], signal: SignalState::initial() });
            }
        }
        out
    }

    /// Closes the start states under both actions and tabulates the result.
    /// States are numbered in sorted order.
    pub fn enumerate(&self, gamma: f64) -> Result<EnumeratedMdp, FixtureError> {
        let mut seen: BTreeMap<FixtureState, [(FixtureState, f64); 2]> = BTreeMap::new();
        let mut stack = self.start_states();
        while let Some(s) = stack.pop() {
            if seen.contains_key(&s) {
                continue;
            }
            let e = self.transition(&s, 0)?;
            let c = self.transition(&s, 1)?;
            stack.push(e.0.clone());
            stack.push(c.0.clone());
            seen.insert(s, [e, c]);
        }
        let states: Vec<FixtureState> = seen.keys().cloned().collect();
        let index: BTreeMap<FixtureState, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let n = states.len();
        let mut p = alloc::vec![0.0; n * 2 * n];
        let mut r = alloc::vec![0.0; n * 2];
        for (i, s) in states.iter().enumerate() {
            for (a, (next, reward)) in seen[s].iter().enumerate() {
                p[(i * 2 + a) * n + index[next]] = 1.0;
                r[i * 2 + a] = *reward;
            }
        }
        let mdp = TabularMdp::new(n, 2, p, r, gamma)?;
        Ok(EnumeratedMdp { mdp, states, index })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SignalMode;

    #[test]
    fn fixture_is_small_and_closed() {
        let f = TabularFixture::d13();
        assert_eq!(f.net.lag(0), 0);
        let e = f.enumerate(0.5).unwrap();
        assert!(e.states.len() > 25 && e.states.len() < 400, "{}", e.states.len());
        assert!(e.states.iter().all(|s| s.queues.iter().all(|q| *q <= CAPACITY)));
    }

    #[test]
    fn hand_traced_step() {
        // Green for approach 0: one arrival joins, two leave; approach 1 gains one.
        let f = TabularFixture::d13();
        let s = FixtureState { queues: alloc::vec![3, 1], signal: SignalState { elapsed: 1, ..SignalState::initial() } };
        let (next, r) = f.transition(&s, 0).unwrap();
        assert_eq!(next.queues, alloc::vec![2, 2]);
        assert_eq!(next.signal.elapsed, 2);
        assert_eq!(r, -4.0);
        let (next, _) = f.transition(&s, 1).unwrap();
        assert_eq!(next.signal.mode, SignalMode::Yellow);
        assert_eq!(next.queues, alloc::vec![4, 2]);
    }
}
