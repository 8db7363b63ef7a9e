//! Episodic environments for the learners: a tabular MDP and the simulator.

use alloc::vec::Vec;
use rand::Rng;

use crate::control::ControlError;
use crate::demand::DemandProfile;
use crate::frame::belief::{BeliefFilter, DemandBelief};
use crate::frame::mdp::TabularMdp;
use crate::frame::observe::{boundary_links, observe, BoundaryConfig, FactoredState};
use crate::metrics::{CostCoefficients, Criterion, MetricsRecorder};
use crate::network::Network;
use crate::rng::{self, stream, SimRng, StreamRole};
use crate::signal::{ControlMode, SignalAction};
use crate::sim::{step, Arrivals, SimConfig, SimState};

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<O> {
    pub rewards: Vec<f64>,
    pub obs: Vec<O>,
}

/// A multi-agent episodic task with a fixed horizon and discrete actions.
pub trait Environment {
    type Obs: Clone;

    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Starts episode `episode`; any randomness comes from `rng`.
    fn reset(&mut self, episode: u64, rng: &mut SimRng) -> Result<Vec<Self::Obs>, ControlError>;
    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome<Self::Obs>, ControlError>;
    fn done(&self) -> bool;
}

/// Single-agent episodes on an explicit MDP.
#[derive(Debug, Clone)]
pub struct MdpEnvironment {
    pub mdp: TabularMdp,
    /// Start-state distribution.
    pub start: Vec<f64>,
    pub horizon: u64,
    state: usize,
    t: u64,
    rng: SimRng,
}

impl MdpEnvironment {
    pub fn new(mdp: TabularMdp, start: Vec<f64>, horizon: u64, seed: u64) -> Self {
        Self { mdp, start, horizon, state: 0, t: 0, rng: stream(seed, 0, StreamRole::Simulation) }
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Environment for MdpEnvironment {
    type Obs = usize;

    fn n_agents(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&mut self, _: u64, rng: &mut SimRng) -> Result<Vec<usize>, ControlError> {
        self.state = rng::categorical(rng, &self.start);
        self.t = 0;
        Ok(alloc::vec![self.state])
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome<usize>, ControlError> {
        let a = actions[0];
        let r = self.mdp.reward(self.state, a);
        self.state = rng::categorical(&mut self.rng, self.mdp.row(self.state, a));
        self.t += 1;
        Ok(StepOutcome { rewards: alloc::vec![r], obs: alloc::vec![self.state] })
    }

    fn done(&self) -> bool {
        self.t >= self.horizon
    }
}

/// Every intersection is an agent choosing Extend (0) or Change (1); each
/// is rewarded with the negated step criterion of its own intersection.
#[derive(Debug, Clone)]
pub struct SimEnvironment {
    pub net: Network,
    pub cfg: SimConfig,
    pub demand: DemandProfile,
    pub boundaries: Vec<BoundaryConfig>,
    pub reward: Criterion,
    pub coeffs: CostCoefficients,
    /// Episodes start from one of these, drawn uniformly; otherwise from
    /// an empty network.
    pub starts: Option<Vec<SimState>>,
    /// Prior for the demand filters of belief-level observations.
    pub prior: Option<DemandBelief>,
    /// Seed of the per-episode simulation streams.
    pub seed: u64,
    state: Option<SimState>,
    recorder: MetricsRecorder,
    filters: Vec<Option<BeliefFilter>>,
}

impl SimEnvironment {
    pub fn new(net: Network, cfg: SimConfig, demand: DemandProfile, boundaries: Vec<BoundaryConfig>, reward: Criterion, seed: u64) -> Self {
        let recorder = MetricsRecorder::new(net.n_intersections(), CostCoefficients::default());
        Self {
            net,
            cfg,
            demand,
            boundaries,
            reward,
            coeffs: CostCoefficients::default(),
            starts: None,
            prior: None,
            seed,
            state: None,
            recorder,
            filters: Vec::new(),
        }
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    fn observe_all(&self) -> Result<Vec<FactoredState>, ControlError> {
        let st = self.state.as_ref().expect("reset before observing");
        self.boundaries.iter().zip(&self.filters).map(|(b, f)| Ok(observe(&self.net, st, b, f.as_ref().map(|f| f.beliefs.as_slice()))?)).collect()
    }
}

impl Environment for SimEnvironment {
    type Obs = FactoredState;

    fn n_agents(&self) -> usize {
        self.boundaries.len()
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, episode: u64, rng: &mut SimRng) -> Result<Vec<FactoredState>, ControlError> {
        let sim_rng = stream(self.seed, episode, StreamRole::Simulation);
        let st = match &self.starts {
            Some(starts) if !starts.is_empty() => {
                let mut s = starts[rng.random_range(0..starts.len())].clone();
                s.rng = sim_rng;
                s
            }
            _ => {
                let control = alloc::vec![ControlMode::Fps; self.net.n_intersections()];
                SimState::new(&self.net, &self.cfg, &self.demand, control, sim_rng)?
            }
        };
        self.state = Some(st);
        self.recorder = MetricsRecorder::new(self.net.n_intersections(), self.coeffs);
        self.filters = self
            .boundaries
            .iter()
            .map(|b| b.level.has_belief().then(|| self.prior.as_ref().map(|p| BeliefFilter::new(boundary_links(&self.net, b), p))).flatten())
            .collect();
        self.observe_all()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome<FactoredState>, ControlError> {
        let st = self.state.as_mut().expect("reset before stepping");
        let mut joint = alloc::vec![SignalAction::Extend; self.net.n_intersections()];
        for (b, a) in self.boundaries.iter().zip(actions) {
            joint[b.intersection] = SignalAction::from_fps_index(*a);
        }
        step(&self.net, &self.cfg, st, &joint, Arrivals::FromProfile(&self.demand))?;
        let metrics = self.recorder.record(&self.net, &self.cfg, st);
        for f in self.filters.iter_mut().flatten() {
            let counts: Vec<f64> = f.links.iter().map(|&l| st.links[l].inflow).collect();
            f.observe(&counts, self.cfg.step_s);
        }
        let rewards = self.boundaries.iter().map(|b| -metrics[b.intersection].get(self.reward)).collect();
        Ok(StepOutcome { rewards, obs: self.observe_all()? })
    }

    fn done(&self) -> bool {
        self.state.as_ref().is_none_or(|s| s.t >= self.cfg.horizon)
    }
}
