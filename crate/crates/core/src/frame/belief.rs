//! Forward filtering of a hidden-regime demand process.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demand::{dot, propagate};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("belief must be a probability vector over the regimes")]
    NotSimplex,
    #[error("rates must be non-negative and finite")]
    BadRate,
    #[error("transition matrix must be square and row-stochastic")]
    BadTransition,
    #[error("expected one likelihood per regime")]
    LikelihoodCount,
    /// Every regime explains the observation with zero weight. Carries the
    /// predicted prior, which callers use in place of the posterior.
    #[error("observation has zero likelihood under every regime")]
    DegenerateLikelihood(DemandBelief),
}

/// Belief over the hidden regime driving one demand source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandBelief {
    probs: Vec<f64>,
    rates: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

const TOL: f64 = 1e-12;

impl DemandBelief {
    pub fn new(probs: Vec<f64>, rates: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self, BeliefError> {
        let k = rates.len();
        if probs.len() != k || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || libm::fabs(probs.iter().sum::<f64>() - 1.0) > TOL {
            return Err(BeliefError::NotSimplex);
        }
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(BeliefError::BadRate);
        }
        let bad_row =
            |row: &Vec<f64>| row.len() != k || row.iter().any(|p| !(0.0..=1.0).contains(p)) || libm::fabs(row.iter().sum::<f64>() - 1.0) > TOL;
        if transition.len() != k || transition.iter().any(bad_row) {
            return Err(BeliefError::BadTransition);
        }
        Ok(Self { probs, rates, transition })
    }

    pub fn uniform(rates: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self, BeliefError> {
        let k = rates.len().max(1);
        Self::new(alloc::vec![1.0 / k as f64; rates.len()], rates, transition)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn n_regimes(&self) -> usize {
        self.rates.len()
    }

    /// Most probable regime, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = k;
            }
        }
        best
    }

    /// `bᵀ·T`.
    pub fn predict(&self) -> DemandBelief {
        Self { probs: propagate(&self.probs, &self.transition), ..self.clone() }
    }

    /// Expected arrivals in the `k`-th step ahead, `(bᵀ Tᵏ)·rates·τ` with k ≥ 1.
    pub fn expected_arrivals(&self, k: usize, step_s: f64) -> f64 {
        let mut d = self.probs.clone();
        for _ in 0..k {
            d = propagate(&d, &self.transition);
        }
        dot(&d, &self.rates) * step_s
    }

    fn with_probs(&self, probs: Vec<f64>) -> Self {
        Self { probs, ..self.clone() }
    }
}

/// One forward step with explicit per-regime likelihoods of the observation.
pub fn update_with_likelihoods(b: &DemandBelief, likelihoods: &[f64]) -> Result<DemandBelief, BeliefError> {
    if likelihoods.len() != b.n_regimes() {
        return Err(BeliefError::LikelihoodCount);
    }
    let prior = b.predict();
    let weighted: Vec<f64> = prior.probs.iter().zip(likelihoods).map(|(p, l)| p * l).collect();
    let total: f64 = weighted.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(BeliefError::DegenerateLikelihood(prior));
    }
    Ok(prior.with_probs(normalize(weighted, total)))
}

/// Forward step with a Poisson(rate·τ) likelihood for the observed count.
///
/// Works in log space, so only regimes that give the count probability
/// exactly zero drop out.
pub fn belief_update(b: &DemandBelief, count: u32, step_s: f64) -> Result<DemandBelief, BeliefError> {
    let prior = b.predict();
    let logs: Vec<f64> = b.rates.iter().map(|r| poisson_ln_pmf(count, r * step_s)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY || top.is_nan() {
        return Err(BeliefError::DegenerateLikelihood(prior));
    }
    let weighted: Vec<f64> = prior.probs.iter().zip(&logs).map(|(p, l)| p * math::exp(l - top)).collect();
    let total: f64 = weighted.iter().sum();
    if !(total > 0.0) {
        return Err(BeliefError::DegenerateLikelihood(prior));
    }
    Ok(prior.with_probs(normalize(weighted, total)))
}

/// Like [`belief_update`] but falls back to the predicted prior; the flag
/// reports whether that happened.
pub fn belief_update_or_prior(b: &DemandBelief, count: u32, step_s: f64) -> (DemandBelief, bool) {
    match belief_update(b, count, step_s) {
        Ok(post) => (post, false),
        Err(BeliefError::DegenerateLikelihood(prior)) => (prior, true),
        Err(_) => (b.predict(), true),
    }
}

/// One belief per monitored link, fed with the link's per-step entry count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefFilter {
    pub links: Vec<usize>,
    pub beliefs: Vec<DemandBelief>,
    /// Steps on which the likelihood degenerated and the prior was kept.
    pub fallbacks: u64,
}

impl BeliefFilter {
    pub fn new(links: Vec<usize>, prior: &DemandBelief) -> Self {
        let beliefs = alloc::vec![prior.clone(); links.len()];
        Self { links, beliefs, fallbacks: 0 }
    }

    /// Feeds one count per link, in `links` order.
    pub fn observe(&mut self, counts: &[f64], step_s: f64) {
        for (b, c) in self.beliefs.iter_mut().zip(counts) {
            let (next, fell_back) = belief_update_or_prior(b, math::round(c.max(0.0)) as u32, step_s);
            *b = next;
            self.fallbacks += u64::from(fell_back);
        }
    }
}

pub fn poisson_ln_pmf(k: u32, mean: f64) -> f64 {
    if mean <= 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let k = f64::from(k);
    k * math::ln(mean) - mean - math::ln_gamma(k + 1.0)
}

fn normalize(mut w: Vec<f64>, total: f64) -> Vec<f64> {
    for x in &mut w {
        *x /= total;
    }
    // Push the rounding residue into the largest entry so the sum is 1 to
    // within one ulp.
    let s: f64 = w.iter().sum();
    if let Some(big) = w.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *big = (*big + (1.0 - s)).clamp(0.0, 1.0);
    }
    w
}
