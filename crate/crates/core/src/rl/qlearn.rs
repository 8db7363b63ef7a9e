//! Q-tables, the TD update, exploration and the training loop.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use crate::classic::argmax_lowest;
use crate::control::{ControlError, DecisionContext, SignalController};
use crate::frame::observe::{observe, BoundaryConfig, FactoredState, IntersectionFeatures};
use crate::math;
use crate::rng::{stream, SimRng, StreamRole};
use crate::signal::{ControlMode, SignalAction, SignalMode};

/// Discrete state: the quantised features, concatenated.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey(pub Vec<u32>);

/// Bin widths for quantising observation features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyBins {
    pub queue: f64,
    /// Steps per elapsed-time bin.
    pub elapsed: u32,
    pub demand: f64,
}

impl Default for KeyBins {
    fn default() -> Self {
        Self { queue: 1.0, elapsed: 1, demand: 1.0 }
    }
}

fn bin(x: f64, width: f64) -> u32 {
    math::floor(x.max(0.0) / width) as u32
}

fn mode_index(m: SignalMode) -> u32 {
    match m {
        SignalMode::Green => 0,
        SignalMode::Yellow => 1,
        SignalMode::AllRed => 2,
    }
}

fn push_features(key: &mut Vec<u32>, f: &IntersectionFeatures, bins: &KeyBins) {
    key.extend(f.queues.iter().map(|q| bin(*q, bins.queue)));
    key.push(f.phase as u32);
    key.push(mode_index(f.mode));
    key.push(f.elapsed / bins.elapsed.max(1));
}

/// Uniform quantisation of the features the observation's level includes.
/// Beliefs enter as their most probable regime.
pub fn state_key(fs: &FactoredState, bins: &KeyBins) -> StateKey {
    let mut key = Vec::new();
    push_features(&mut key, &fs.controlled, bins);
    if let Some(d) = &fs.demand {
        key.extend(d.iter().map(|x| bin(*x, bins.demand)));
    }
    for n in &fs.neighbors {
        push_features(&mut key, n, bins);
    }
    if let Some(b) = &fs.belief {
        key.extend(b.iter().map(|b| b.argmax() as u32));
    }
    StateKey(key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QTableFile", from = "QTableFile")]
pub struct QTable {
    pub n_actions: usize,
    values: BTreeMap<StateKey, Vec<f64>>,
    visits: BTreeMap<StateKey, Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableFile {
    pub actions: usize,
    pub entries: Vec<QEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QEntry {
    pub key: Vec<u32>,
    pub values: Vec<f64>,
    pub visits: Vec<u64>,
}

impl From<QTable> for QTableFile {
    fn from(t: QTable) -> Self {
        let entries = t
            .values
            .iter()
            .map(|(k, v)| QEntry { key: k.0.clone(), values: v.clone(), visits: t.visits.get(k).cloned().unwrap_or_default() })
            .collect();
        QTableFile { actions: t.n_actions, entries }
    }
}

impl From<QTableFile> for QTable {
    fn from(f: QTableFile) -> Self {
        let mut t = QTable::new(f.actions);
        for e in f.entries {
            t.values.insert(StateKey(e.key.clone()), e.values);
            t.visits.insert(StateKey(e.key), e.visits);
        }
        t
    }
}

impl QTable {
    pub fn new(n_actions: usize) -> Self {
        Self { n_actions, values: BTreeMap::new(), visits: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Unvisited entries read as 0.
    pub fn get(&self, s: &StateKey, a: usize) -> f64 {
        self.values.get(s).map_or(0.0, |row| row[a])
    }

    pub fn row(&self, s: &StateKey) -> Vec<f64> {
        self.values.get(s).cloned().unwrap_or_else(|| alloc::vec![0.0; self.n_actions])
    }

    pub fn set(&mut self, s: &StateKey, a: usize, q: f64) {
        let n = self.n_actions;
        self.values.entry(s.clone()).or_insert_with(|| alloc::vec![0.0; n])[a] = q;
    }

    pub fn visits(&self, s: &StateKey, a: usize) -> u64 {
        self.visits.get(s).map_or(0, |row| row[a])
    }

    fn visit(&mut self, s: &StateKey, a: usize) {
        let n = self.n_actions;
        self.visits.entry(s.clone()).or_insert_with(|| alloc::vec![0; n])[a] += 1;
    }

    pub fn max(&self, s: &StateKey) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self, s: &StateKey) -> usize {
        argmax_lowest(&self.row(s))
    }

    pub fn keys(&self) -> impl Iterator<Item = &StateKey> {
        self.values.keys()
    }
}

/// `Q(s,a) ← Q(s,a) + α·(r + γ·max_a′ Q(s′,a′) − Q(s,a))`; `next = None`
/// bootstraps from 0.
pub fn q_update(q: &mut QTable, s: &StateKey, a: usize, r: f64, next: Option<&StateKey>, alpha: f64, gamma: f64) {
    let boot = next.map_or(0.0, |n| q.max(n));
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (r + gamma * boot - old));
}

/// Uniform random action with probability `epsilon`, else greedy.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QTable, s: &StateKey, epsilon: f64, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < epsilon {
        rng.random_range(0..q.n_actions)
    } else {
        q.greedy(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSchedule {
    Constant {
        alpha: f64,
    },
    /// `1/(1 + n)` with `n` the earlier visits of `(s, a)`.
    InverseVisits,
    /// `1/(1 + n)^ω`, ω ∈ (0.5, 1].
    Power {
        omega: f64,
    },
}

impl AlphaSchedule {
    pub fn at(&self, visits: u64) -> f64 {
        match *self {
            AlphaSchedule::Constant { alpha } => alpha,
            AlphaSchedule::InverseVisits => 1.0 / (1.0 + visits as f64),
            AlphaSchedule::Power { omega } => libm::pow(1.0 + visits as f64, -omega),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsilonSchedule {
    Constant {
        epsilon: f64,
    },
    /// `max(floor, base^episode)`.
    Decay {
        floor: f64,
        base: f64,
    },
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule::Decay { floor: 0.05, base: 0.999 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: u64) -> f64 {
        match *self {
            EpsilonSchedule::Constant { epsilon } => epsilon,
            EpsilonSchedule::Decay { floor, base } => libm::pow(base, episode as f64).max(floor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QLearningConfig {
    pub episodes: u64,
    pub gamma: f64,
    pub alpha: AlphaSchedule,
    pub epsilon: EpsilonSchedule,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: u64,
    /// Undiscounted return summed over agents.
    pub ret: f64,
    pub epsilon: f64,
    pub alpha_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTraining {
    /// One table per agent.
    pub tables: Vec<QTable>,
    pub curve: Vec<CurvePoint>,
    pub steps: u64,
}

/// Independent learners, one per agent of `env`, trained in lockstep with
/// ε-greedy behaviour. Episodes end at the environment's horizon; the last
/// transition still bootstraps.
pub fn q_learning_train<E, K>(env: &mut E, key: K, cfg: &QLearningConfig) -> Result<QTraining, ControlError>
where
    E: Environment,
    K: Fn(&E::Obs) -> StateKey,
{
    let n = env.n_agents();
    let mut tables = alloc::vec![QTable::new(env.n_actions()); n];
    let mut curve = Vec::new();
    let mut rng = stream(cfg.seed, 0, StreamRole::Training);
    let mut steps = 0;
    for episode in 0..cfg.episodes {
        let eps = cfg.epsilon.at(episode);
        let obs = env.reset(episode, &mut rng)?;
        let mut keys: Vec<StateKey> = obs.iter().map(&key).collect();
        let (mut ret, mut alpha_sum, mut updates) = (0.0, 0.0, 0u64);
        while !env.done() {
            let actions: Vec<usize> = (0..n).map(|k| epsilon_greedy(&tables[k], &keys[k], eps, &mut rng)).collect();
            let out = env.step(&actions)?;
            let next: Vec<StateKey> = out.obs.iter().map(&key).collect();
            for k in 0..n {
                let alpha = cfg.alpha.at(tables[k].visits(&keys[k], actions[k]));
                tables[k].visit(&keys[k], actions[k]);
                q_update(&mut tables[k], &keys[k], actions[k], out.rewards[k], Some(&next[k]), alpha, cfg.gamma);
                alpha_sum += alpha;
                updates += 1;
                ret += out.rewards[k];
            }
            keys = next;
            steps += 1;
        }
        let alpha_mean = if updates == 0 { 0.0 } else { alpha_sum / updates as f64 };
        curve.push(CurvePoint { episode, ret, epsilon: eps, alpha_mean });
    }
    Ok(QTraining { tables, curve, steps })
}

/// A frozen table acting greedily on one intersection.
#[derive(Debug, Clone)]
pub struct QLearningController {
    pub table: QTable,
    pub boundary: BoundaryConfig,
    pub bins: KeyBins,
    pub filter: Option<crate::frame::belief::BeliefFilter>,
}

impl SignalController for QLearningController {
    fn mode(&self) -> ControlMode {
        ControlMode::Fps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        if let (Some(f), Some(_)) = (&mut self.filter, ctx.last) {
            let counts: Vec<f64> = f.links.iter().map(|&l| ctx.state.links[l].inflow).collect();
            f.observe(&counts, ctx.cfg.step_s);
        }
        let beliefs = self.filter.as_ref().map(|f| f.beliefs.as_slice());
        let fs = observe(ctx.net, ctx.state, &self.boundary, beliefs)?;
        Ok(SignalAction::from_fps_index(self.table.greedy(&state_key(&fs, &self.bins))))
    }
}

/// Deterministic sampling stream for a controller of intersection `i`.
pub fn controller_rng(seed: u64, run: u64, i: usize) -> SimRng {
    stream(seed, run, StreamRole::Controller(i as u32))
}
