//! Explicit finite MDPs and exact dynamic programming over them.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("MDP needs at least one state and one action")]
    Empty,
    #[error("discount must lie in [0, 1)")]
    Discount,
    #[error("P(.|{state},{action}) is not a probability distribution")]
    Row { state: usize, action: usize },
    #[error("table shape does not match |S| x |A|")]
    Shape,
    #[error("reward R({state},{action}) is not finite")]
    Reward { state: usize, action: usize },
}

/// `⟨S, A, P, R, γ⟩` with dense tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MdpFile", try_from = "MdpFile")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `p[(s·|A| + a)·|S| + s′]`
    p: Vec<f64>,
    /// `r[s·|A| + a]`
    r: Vec<f64>,
    gamma: f64,
}

/// On-disk form: only non-zero transition entries are listed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpFile {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    /// `rewards[s][a]`
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[s][a]` lists `(s′, probability)`.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        let rewards = (0..m.n_states).map(|s| (0..m.n_actions).map(|a| m.reward(s, a)).collect()).collect();
        let transitions = (0..m.n_states)
            .map(|s| (0..m.n_actions).map(|a| m.row(s, a).iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(j, p)| (j, *p)).collect()).collect())
            .collect();
        MdpFile { states: m.n_states, actions: m.n_actions, gamma: m.gamma, rewards, transitions }
    }
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = MdpError;

    fn try_from(f: MdpFile) -> Result<Self, MdpError> {
        let (ns, na) = (f.states, f.actions);
        if f.rewards.len() != ns || f.transitions.len() != ns {
            return Err(MdpError::Shape);
        }
        let mut p = alloc::vec![0.0; ns * na * ns];
        let mut r = Vec::with_capacity(ns * na);
        for s in 0..ns {
            if f.rewards[s].len() != na || f.transitions[s].len() != na {
                return Err(MdpError::Shape);
            }
            r.extend_from_slice(&f.rewards[s]);
            for a in 0..na {
                for &(j, q) in &f.transitions[s][a] {
                    if j >= ns {
                        return Err(MdpError::Shape);
                    }
                    p[(s * na + a) * ns + j] += q;
                }
            }
        }
        TabularMdp::new(ns, na, p, r, f.gamma)
    }
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, r: Vec<f64>, gamma: f64) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::Empty);
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::Discount);
        }
        if p.len() != n_states * n_actions * n_states || r.len() != n_states * n_actions {
            return Err(MdpError::Shape);
        }
        let m = Self { n_states, n_actions, p, r, gamma };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = m.row(s, a);
                if row.iter().any(|q| !(0.0..=1.0).contains(q)) || libm::fabs(row.iter().sum::<f64>() - 1.0) > ROW_TOL {
                    return Err(MdpError::Row { state: s, action: a });
                }
                if !m.reward(s, a).is_finite() {
                    return Err(MdpError::Reward { state: s, action: a });
                }
            }
        }
        Ok(m)
    }

    /// Random MDP with Dirichlet(1)-like rows (normalised uniforms) and
    /// rewards uniform in [-1, 1].
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self, MdpError> {
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let s: f64 = row.iter().sum();
            row[0] += 1.0 - s;
            p.extend(row);
        }
        let r = (0..n_states * n_actions).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        Self::new(n_states, n_actions, p, r, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, MdpError> {
        Self::new(self.n_states, self.n_actions, self.p.clone(), self.r.clone(), gamma)
    }

    /// `R(s,a) + γ Σ_s′ P(s′|s,a) V(s′)`
    pub fn q_value(&self, v: &[f64], s: usize, a: usize) -> f64 {
        let ev: f64 = self.row(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
        self.reward(s, a) + self.gamma * ev
    }

    /// One application of the Bellman optimality operator.
    pub fn bellman_optimality(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n_states).map(|s| (0..self.n_actions).map(|a| self.q_value(v, s, a)).fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    /// Greedy action per state, lowest index on ties.
    pub fn greedy(&self, v: &[f64]) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let mut best = 0;
                let mut best_q = self.q_value(v, s, 0);
                for a in 1..self.n_actions {
                    let q = self.q_value(v, s, a);
                    if q > best_q {
                        best = a;
                        best_q = q;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIteration {
    pub values: Vec<f64>,
    pub policy: Vec<usize>,
    /// `‖V_{k+1} − V_k‖∞` after every sweep.
    pub residuals: Vec<f64>,
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| libm::fabs(x - y)).fold(0.0, f64::max)
}

/// Iterates the optimality operator from `V = 0` until successive iterates
/// differ by less than `tol·(1−γ)/γ`, which bounds the distance to `V*` by `tol`.
pub fn value_iteration(m: &TabularMdp, tol: f64) -> ValueIteration {
    let threshold = if m.gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - m.gamma) / m.gamma };
    let mut v = alloc::vec![0.0; m.n_states];
    let mut residuals = Vec::new();
    loop {
        let next = m.bellman_optimality(&v);
        let delta = sup_norm_diff(&next, &v);
        residuals.push(delta);
        v = next;
        if delta < threshold || delta == 0.0 {
            break;
        }
    }
    let policy = m.greedy(&v);
    ValueIteration { values: v, policy, residuals }
}

/// A fixed number of optimality sweeps from `V = 0`.
pub fn value_sweeps(m: &TabularMdp, sweeps: usize) -> Vec<f64> {
    let mut v = alloc::vec![0.0; m.n_states];
    for _ in 0..sweeps {
        v = m.bellman_optimality(&v);
    }
    v
}

/// `π[s][a]` putting all mass on `actions[s]`.
pub fn deterministic_policy(n_actions: usize, actions: &[usize]) -> Vec<Vec<f64>> {
    actions
        .iter()
        .map(|&a| {
            let mut row = alloc::vec![0.0; n_actions];
            row[a] = 1.0;
            row
        })
        .collect()
}

/// `V^π` by iterating the policy's Bellman operator to a 1e-9 fixed-point
/// tolerance.
pub fn policy_evaluation(m: &TabularMdp, pi: &[Vec<f64>]) -> Vec<f64> {
    let threshold = if m.gamma == 0.0 { f64::INFINITY } else { 1e-9 * (1.0 - m.gamma) / m.gamma };
    let mut v = alloc::vec![0.0; m.n_states];
    loop {
        let next: Vec<f64> = (0..m.n_states).map(|s| (0..m.n_actions).map(|a| pi[s][a] * m.q_value(&v, s, a)).sum()).collect();
        let delta = sup_norm_diff(&next, &v);
        v = next;
        if delta < threshold || delta == 0.0 {
            return v;
        }
    }
}
