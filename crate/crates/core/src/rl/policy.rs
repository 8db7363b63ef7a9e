//! Linear-softmax policies and the REINFORCE estimator.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use crate::control::{ControlError, DecisionContext, SignalController};
use crate::frame::mdp::TabularMdp;
use crate::frame::observe::{observe, BoundaryConfig, FactoredState};
use crate::math;
use crate::network::Network;
use crate::rng::{stream, SimRng, StreamRole};
use crate::signal::{ControlMode, SignalAction, SignalMode};

/// `π_θ(a|s) ∝ exp(Σ_f φ_f(s)·θ[f, a])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_features: usize,
    pub n_actions: usize,
    /// Row-major `[feature][action]`.
    pub theta: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn zeros(n_features: usize, n_actions: usize) -> Self {
        Self { n_features, n_actions, theta: alloc::vec![0.0; n_features * n_actions] }
    }

    pub fn probs(&self, phi: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> =
            (0..self.n_actions).map(|a| phi.iter().enumerate().map(|(f, x)| x * self.theta[f * self.n_actions + a]).sum()).collect();
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| math::exp(l - top)).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    /// `∇_θ log π_θ(a|s)`, added into `out`, scaled by `w`.
    pub fn add_score(&self, phi: &[f64], a: usize, w: f64, out: &mut [f64]) {
        let p = self.probs(phi);
        for (f, x) in phi.iter().enumerate() {
            for b in 0..self.n_actions {
                let ind = if a == b { 1.0 } else { 0.0 };
                out[f * self.n_actions + b] += w * x * (ind - p[b]);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, phi: &[f64], rng: &mut R) -> usize {
        crate::rng::categorical(rng, &self.probs(phi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(features, action, reward)` per step.
    pub steps: Vec<(Vec<f64>, usize, f64)>,
}

impl Trajectory {
    /// Undiscounted return.
    pub fn ret(&self) -> f64 {
        self.steps.iter().map(|s| s.2).sum()
    }
}

/// `(1/N) Σ_n (R(τⁿ) − b) Σ_t ∇ log π(a_t|s_t)`, with `b` the mean return
/// when `baseline` is set and 0 otherwise.
pub fn reinforce_gradient(trajectories: &[Trajectory], policy: &SoftmaxPolicy, baseline: bool) -> Vec<f64> {
    let mut g = alloc::vec![0.0; policy.theta.len()];
    if trajectories.is_empty() {
        return g;
    }
    let n = trajectories.len() as f64;
    let b = if baseline { trajectories.iter().map(Trajectory::ret).sum::<f64>() / n } else { 0.0 };
    for tr in trajectories {
        let w = (tr.ret() - b) / n;
        for (phi, a, _) in &tr.steps {
            policy.add_score(phi, *a, w, &mut g);
        }
    }
    g
}

pub fn reinforce_update(theta: &mut [f64], gradient: &[f64], lr: f64) {
    for (t, g) in theta.iter_mut().zip(gradient) {
        *t += lr * g;
    }
}

/// Exact `J(θ) = Σ_τ p_θ(τ)·R(τ)` and its gradient on an MDP, enumerating
/// every trajectory of `horizon` steps from `start`.
pub fn exact_objective_and_gradient(
    mdp: &TabularMdp,
    start: &[f64],
    horizon: usize,
    policy: &SoftmaxPolicy,
    features: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    struct Walk<'a> {
        mdp: &'a TabularMdp,
        policy: &'a SoftmaxPolicy,
        features: &'a [Vec<f64>],
        horizon: usize,
        j: f64,
        grad: Vec<f64>,
    }
    impl Walk<'_> {
        fn go(&mut self, s: usize, depth: usize, prob: f64, ret: f64, score: &[f64]) {
            if depth == self.horizon {
                self.j += prob * ret;
                for (g, x) in self.grad.iter_mut().zip(score.iter()) {
                    *g += prob * ret * x;
                }
                return;
            }
            let phi = &self.features[s];
            let pa = self.policy.probs(phi);
            for (a, pa) in pa.iter().enumerate() {
                let mut sc = score.to_vec();
                self.policy.add_score(phi, a, 1.0, &mut sc);
                let r = self.mdp.reward(s, a);
                for (s2, p) in self.mdp.row(s, a).iter().enumerate() {
                    if *p > 0.0 {
                        self.go(s2, depth + 1, prob * pa * p, ret + r, &sc);
                    }
                }
            }
        }
    }
    let mut w = Walk { mdp, policy, features, horizon, j: 0.0, grad: alloc::vec![0.0; policy.theta.len()] };
    for (s, p) in start.iter().enumerate() {
        if *p > 0.0 {
            w.go(s, 0, *p, 0.0, &alloc::vec![0.0; policy.theta.len()]);
        }
    }
    (w.j, w.grad)
}

/// Central finite differences of the exact objective.
pub fn finite_difference_gradient(
    mdp: &TabularMdp,
    start: &[f64],
    horizon: usize,
    policy: &SoftmaxPolicy,
    features: &[Vec<f64>],
    h: f64,
) -> Vec<f64> {
    (0..policy.theta.len())
        .map(|k| {
            let mut plus = policy.clone();
            plus.theta[k] += h;
            let mut minus = policy.clone();
            minus.theta[k] -= h;
            let jp = exact_objective_and_gradient(mdp, start, horizon, &plus, features).0;
            let jm = exact_objective_and_gradient(mdp, start, horizon, &minus, features).0;
            (jp - jm) / (2.0 * h)
        })
        .collect()
}

/// Features of an intersection for signal policies: bias, queue served by
/// the current phase, queue waiting elsewhere (both over `queue_scale`),
/// green progress and a green indicator.
pub fn signal_features(net: &Network, fs: &FactoredState, queue_scale: f64) -> Vec<f64> {
    let c = &fs.controlled;
    let mut lanes = Vec::new();
    for &l in net.incoming(c.intersection) {
        lanes.extend_from_slice(net.lanes(l));
    }
    let served = net.phase_movements(c.intersection, c.phase);
    let (mut on, mut off) = (0.0, 0.0);
    for (m, q) in lanes.iter().zip(&c.queues) {
        if served.contains(m) {
            on += q;
        } else {
            off += q;
        }
    }
    let green = if c.mode == SignalMode::Green { 1.0 } else { 0.0 };
    alloc::vec![1.0, on / queue_scale, off / queue_scale, c.progress, green]
}

pub const SIGNAL_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    /// Gradient steps.
    pub iterations: u64,
    /// Episodes per gradient estimate.
    pub batch: usize,
    pub lr: f64,
    pub baseline: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceTraining {
    pub policies: Vec<SoftmaxPolicy>,
    /// Mean batch return per iteration, summed over agents.
    pub curve: Vec<f64>,
}

/// One independent REINFORCE learner per agent.
pub fn reinforce_train<E, F>(env: &mut E, features: F, n_features: usize, cfg: &ReinforceConfig) -> Result<ReinforceTraining, ControlError>
where
    E: Environment,
    F: Fn(&E::Obs) -> Vec<f64>,
{
    let n = env.n_agents();
    let mut policies = alloc::vec![SoftmaxPolicy::zeros(n_features, env.n_actions()); n];
    let mut rng = stream(cfg.seed, 0, StreamRole::Training);
    let mut curve = Vec::new();
    let mut episode = 0;
    for _ in 0..cfg.iterations {
        let mut batches: Vec<Vec<Trajectory>> = alloc::vec![Vec::new(); n];
        for _ in 0..cfg.batch {
            let mut obs = env.reset(episode, &mut rng)?;
            episode += 1;
            let mut trs = alloc::vec![Trajectory { steps: Vec::new() }; n];
            while !env.done() {
                let phis: Vec<Vec<f64>> = obs.iter().map(&features).collect();
                let actions: Vec<usize> = (0..n).map(|k| policies[k].sample(&phis[k], &mut rng)).collect();
                let out = env.step(&actions)?;
                for k in 0..n {
                    trs[k].steps.push((phis[k].clone(), actions[k], out.rewards[k]));
                }
                obs = out.obs;
            }
            for (b, tr) in batches.iter_mut().zip(trs) {
                b.push(tr);
            }
        }
        let mean: f64 = batches.iter().flatten().map(Trajectory::ret).sum::<f64>() / cfg.batch.max(1) as f64;
        curve.push(mean);
        for (p, b) in policies.iter_mut().zip(&batches) {
            let g = reinforce_gradient(b, p, cfg.baseline);
            reinforce_update(&mut p.theta, &g, cfg.lr);
        }
    }
    Ok(ReinforceTraining { policies, curve })
}

/// A trained softmax policy sampling Extend/Change for one intersection.
#[derive(Debug, Clone)]
pub struct ReinforceController {
    pub policy: SoftmaxPolicy,
    pub boundary: BoundaryConfig,
    pub queue_scale: f64,
    rng: SimRng,
}

impl ReinforceController {
    pub fn new(policy: SoftmaxPolicy, boundary: BoundaryConfig, queue_scale: f64, seed: u64, run: u64) -> Self {
        let rng = stream(seed, run, StreamRole::Controller(boundary.intersection as u32));
        Self { policy, boundary, queue_scale, rng }
    }
}

impl SignalController for ReinforceController {
    fn mode(&self) -> ControlMode {
        ControlMode::Fps
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        let b = BoundaryConfig { level: crate::frame::DesignLevel::L1, ..self.boundary };
        let fs = observe(ctx.net, ctx.state, &b, None)?;
        let phi = signal_features(ctx.net, &fs, self.queue_scale);
        Ok(SignalAction::from_fps_index(self.policy.sample(&phi, &mut self.rng)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_returns_give_zero_gradient() {
        let p = SoftmaxPolicy::zeros(1, 2);
        let tr = Trajectory { steps: vec![(vec![1.0], 0, 0.0)] };
        assert_eq!(reinforce_gradient(&[tr], &p, false), vec![0.0, 0.0]);
    }

    #[test]
    fn one_step_gradient() {
        let p = SoftmaxPolicy::zeros(1, 2);
        let tr = Trajectory { steps: vec![(vec![1.0], 0, 1.0)] };
        assert_eq!(reinforce_gradient(&[tr], &p, false), vec![0.5, -0.5]);
        let both = [Trajectory { steps: vec![(vec![1.0], 0, 1.0)] }, Trajectory { steps: vec![(vec![1.0], 1, 1.0)] }];
        assert_eq!(reinforce_gradient(&both, &p, false), vec![0.0, 0.0]);
    }

    #[test]
    fn update_step() {
        let mut th = vec![0.0, 0.0];
        reinforce_update(&mut th, &[0.5, -0.5], 1.0);
        assert_eq!(th, vec![0.5, -0.5]);
        reinforce_update(&mut th, &[0.0, 0.0], 0.3);
        assert_eq!(th, vec![0.5, -0.5]);
    }

    #[test]
    fn softmax_normalised() {
        let mut rng = stream(5, 0, StreamRole::Initialization);
        for _ in 0..50 {
            let mut p = SoftmaxPolicy::zeros(3, 4);
            for t in &mut p.theta {
                *t = rng.random::<f64>() * 10.0 - 5.0;
            }
            let phi: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            assert!((p.probs(&phi).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
