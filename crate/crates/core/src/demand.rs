//! Boundary demand: what enters the network at its entry links.
//!
//! A source is either a piecewise-constant rate schedule or a hidden-regime
//! process (a Markov chain over rate regimes). The regime process plays the
//! role of the unmodelled outer world: controllers only ever see the realised
//! counts.

use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::network::Network;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceDemand {
    /// `(start time s, rate veh/s)` pairs sorted by start time. Before the
    /// first breakpoint the rate is 0.
    Schedule(Vec<(f64, f64)>),
    /// Hidden Markov regime process.
    Regimes { rates: Vec<f64>, transition: Vec<Vec<f64>>, initial: usize },
}

impl SourceDemand {
    pub fn constant(rate: f64) -> Self {
        SourceDemand::Schedule(alloc::vec![(0.0, rate)])
    }

    fn rate_at(schedule: &[(f64, f64)], time_s: f64) -> f64 {
        schedule.iter().take_while(|(start, _)| *start <= time_s + 1e-9).last().map_or(0.0, |(_, r)| *r)
    }

    fn validate(&self) -> Result<(), DemandError> {
        match self {
            SourceDemand::Schedule(points) => {
                if points.is_empty() {
                    return Err(DemandError::EmptySchedule);
                }
                if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(DemandError::UnsortedSchedule);
                }
                if points.iter().any(|(s, r)| !(r.is_finite() && *r >= 0.0 && s.is_finite())) {
                    return Err(DemandError::NegativeRate);
                }
            }
            SourceDemand::Regimes { rates, transition, initial } => {
                let k = rates.len();
                if k == 0 || *initial >= k || transition.len() != k {
                    return Err(DemandError::RegimeShape);
                }
                if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    return Err(DemandError::NegativeRate);
                }
                for row in transition {
                    if row.len() != k || row.iter().any(|p| !(*p >= 0.0)) {
                        return Err(DemandError::RegimeShape);
                    }
                    let s: f64 = row.iter().sum();
                    if libm::fabs(s - 1.0) > 1e-12 {
                        return Err(DemandError::NotStochastic);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DemandError {
    #[error("rates must be finite and non-negative")]
    NegativeRate,
    #[error("schedule has no breakpoints")]
    EmptySchedule,
    #[error("schedule breakpoints must be strictly increasing in time")]
    UnsortedSchedule,
    #[error("regime process has inconsistent dimensions")]
    RegimeShape,
    #[error("regime transition rows must sum to 1 within 1e-12")]
    NotStochastic,
    #[error("link {0} is not an entry link")]
    NotEntryLink(usize),
    #[error("link {0} has more than one demand source")]
    DuplicateSource(usize),
}

/// Demand attached to entry links. Entry links without a source receive nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DemandProfile {
    sources: Vec<(usize, SourceDemand)>,
}

impl DemandProfile {
    pub fn new(net: &Network, sources: Vec<(usize, SourceDemand)>) -> Result<Self, DemandError> {
        for (k, (link, src)) in sources.iter().enumerate() {
            if !net.entry_links().contains(link) {
                return Err(DemandError::NotEntryLink(*link));
            }
            if sources[..k].iter().any(|(l, _)| l == link) {
                return Err(DemandError::DuplicateSource(*link));
            }
            src.validate()?;
        }
        Ok(Self { sources })
    }

    /// Same constant rate on every entry link.
    pub fn uniform(net: &Network, rate: f64) -> Result<Self, DemandError> {
        Self::new(net, net.entry_links().iter().map(|&l| (l, SourceDemand::constant(rate))).collect())
    }

    pub fn sources(&self) -> &[(usize, SourceDemand)] {
        &self.sources
    }

    pub fn source_for(&self, link: usize) -> Option<&SourceDemand> {
        self.sources.iter().find(|(l, _)| *l == link).map(|(_, s)| s)
    }

    /// Multiplies every rate by `factor` (non-negative).
    pub fn scaled(&self, factor: f64) -> Self {
        let sources = self
            .sources
            .iter()
            .map(|(l, s)| {
                let s = match s {
                    SourceDemand::Schedule(p) => SourceDemand::Schedule(p.iter().map(|(t, r)| (*t, r * factor)).collect()),
                    SourceDemand::Regimes { rates, transition, initial } => {
                        SourceDemand::Regimes { rates: rates.iter().map(|r| r * factor).collect(), transition: transition.clone(), initial: *initial }
                    }
                };
                (*l, s)
            })
            .collect();
        Self { sources }
    }

    pub fn initial_state(&self) -> DemandState {
        DemandState {
            sources: self
                .sources
                .iter()
                .map(|(_, s)| match s {
                    SourceDemand::Schedule(_) => SourceState::default(),
                    SourceDemand::Regimes { rates, initial, .. } => {
                        let mut dist = alloc::vec![0.0; rates.len()];
                        dist[*initial] = 1.0;
                        SourceState { regime: *initial, regime_dist: dist, carry: 0.0 }
                    }
                })
                .collect(),
        }
    }

    /// Poisson arrivals for step `t` on every source (in source order).
    /// Regime sources first advance their hidden regime one Markov step.
    pub fn sample_arrivals<R: Rng + ?Sized>(&self, state: &mut DemandState, t: u64, step_s: f64, rng: &mut R) -> Vec<u32> {
        self.sources
            .iter()
            .zip(state.sources.iter_mut())
            .map(|((_, src), st)| {
                let rate = match src {
                    SourceDemand::Schedule(p) => SourceDemand::rate_at(p, t as f64 * step_s),
                    SourceDemand::Regimes { rates, transition, .. } => {
                        st.regime = rng::categorical(rng, &transition[st.regime]);
                        rates[st.regime]
                    }
                };
                rng::poisson(rng, rate * step_s)
            })
            .collect()
    }

    /// Expected arrivals for step `t` without randomness. Regime sources
    /// propagate their regime distribution instead of sampling it.
    pub fn expected_arrivals(&self, state: &mut DemandState, t: u64, step_s: f64) -> Vec<f64> {
        self.sources
            .iter()
            .zip(state.sources.iter_mut())
            .map(|((_, src), st)| match src {
                SourceDemand::Schedule(p) => SourceDemand::rate_at(p, t as f64 * step_s) * step_s,
                SourceDemand::Regimes { rates, transition, .. } => {
                    st.regime_dist = propagate(&st.regime_dist, transition);
                    dot(&st.regime_dist, rates) * step_s
                }
            })
            .collect()
    }

    /// Whole-vehicle version of [`Self::expected_arrivals`]: fractional parts
    /// carry over so the long-run count matches the expected rate.
    pub fn deterministic_counts(&self, state: &mut DemandState, t: u64, step_s: f64) -> Vec<u32> {
        let means = self.expected_arrivals(state, t, step_s);
        means
            .into_iter()
            .zip(state.sources.iter_mut())
            .map(|(m, st)| {
                let c = st.carry + m;
                let n = math::floor(c + 1e-9);
                st.carry = (c - n).max(0.0);
                n as u32
            })
            .collect()
    }

    /// Expected arrivals on each source `k` steps after step `t` (k = 0 is
    /// step `t` itself), as a perfectly informed forecaster would predict
    /// them from the true profile and the current hidden regime.
    pub fn forecast(&self, state: &DemandState, t: u64, k: u64, step_s: f64) -> Vec<f64> {
        self.sources
            .iter()
            .zip(state.sources.iter())
            .map(|((_, src), st)| match src {
                SourceDemand::Schedule(p) => SourceDemand::rate_at(p, (t + k) as f64 * step_s) * step_s,
                SourceDemand::Regimes { rates, transition, .. } => {
                    let mut dist = alloc::vec![0.0; rates.len()];
                    dist[st.regime] = 1.0;
                    for _ in 0..=k {
                        dist = propagate(&dist, transition);
                    }
                    dot(&dist, rates) * step_s
                }
            })
            .collect()
    }
}

pub(crate) fn propagate(dist: &[f64], transition: &[Vec<f64>]) -> Vec<f64> {
    let k = dist.len();
    let mut out = alloc::vec![0.0; k];
    for (i, p) in dist.iter().enumerate() {
        if *p == 0.0 {
            continue;
        }
        for (j, q) in transition[i].iter().enumerate() {
            out[j] += p * q;
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SourceState {
    pub regime: usize,
    pub regime_dist: Vec<f64>,
    pub carry: f64,
}

/// Dynamic part of the demand process (hidden regimes, carry-over).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandState {
    pub sources: Vec<SourceState>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::presets::{single_cross, ApproachParams};
    use crate::rng::{stream, StreamRole};
    use crate::sim::SimConfig;

    fn net() -> Network {
        Network::new(single_cross(ApproachParams::default(), 5.0, 60.0), &SimConfig::default()).unwrap()
    }

    #[test]
    fn zero_rate_gives_zero_counts() {
        let n = net();
        let p = DemandProfile::uniform(&n, 0.0).unwrap();
        let mut st = p.initial_state();
        let mut r = stream(9, 0, StreamRole::Simulation);
        for t in 0..100 {
            assert_eq!(p.sample_arrivals(&mut st, t, 1.0, &mut r), alloc::vec![0, 0]);
        }
    }

    #[test]
    fn poisson_mean_within_three_sigma() {
        let n = net();
        let p = DemandProfile::new(&n, alloc::vec![(0, SourceDemand::constant(0.2))]).unwrap();
        let mut st = p.initial_state();
        let mut r = stream(42, 0, StreamRole::Simulation);
        let draws = 10_000;
        let total: u64 = (0..draws).map(|t| u64::from(p.sample_arrivals(&mut st, t, 1.0, &mut r)[0])).sum();
        let mean = total as f64 / draws as f64;
        let sigma = libm::sqrt(0.2 / draws as f64);
        assert!(libm::fabs(mean - 0.2) < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn absorbing_regime_uses_its_rate() {
        let n = net();
        let src =
            SourceDemand::Regimes { rates: alloc::vec![0.0, 5.0], transition: alloc::vec![alloc::vec![1.0, 0.0], alloc::vec![0.0, 1.0]], initial: 0 };
        let p = DemandProfile::new(&n, alloc::vec![(0, src)]).unwrap();
        let mut st = p.initial_state();
        let mut r = stream(5, 0, StreamRole::Simulation);
        for t in 0..500 {
            assert_eq!(p.sample_arrivals(&mut st, t, 1.0, &mut r), alloc::vec![0]);
            assert_eq!(st.sources[0].regime, 0);
        }
    }

    #[test]
    fn rejects_non_stochastic_rows() {
        let n = net();
        let src =
            SourceDemand::Regimes { rates: alloc::vec![0.1, 0.2], transition: alloc::vec![alloc::vec![0.5, 0.6], alloc::vec![0.0, 1.0]], initial: 0 };
        assert_eq!(DemandProfile::new(&n, alloc::vec![(0, src)]), Err(DemandError::NotStochastic));
        assert_eq!(DemandProfile::new(&n, alloc::vec![(0, SourceDemand::constant(-1.0))]), Err(DemandError::NegativeRate));
    }

    #[test]
    fn deterministic_counts_track_rate() {
        let n = net();
        let p = DemandProfile::new(&n, alloc::vec![(0, SourceDemand::constant(0.25))]).unwrap();
        let mut st = p.initial_state();
        let counts: Vec<u32> = (0..8).map(|t| p.deterministic_counts(&mut st, t, 1.0)[0]).collect();
        assert_eq!(counts, alloc::vec![0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn forecast_reads_schedule_steps() {
        let n = net();
        let p = DemandProfile::new(&n, alloc::vec![(0, SourceDemand::Schedule(alloc::vec![(0.0, 0.1), (13.0, 0.5)]))]).unwrap();
        let st = p.initial_state();
        let f: Vec<f64> = (0..5).map(|k| p.forecast(&st, 10, k, 1.0)[0]).collect();
        assert_eq!(f, alloc::vec![0.1, 0.1, 0.1, 0.5, 0.5]);
    }
}
