//! The controller interface and the closed loop that drives a simulation.

use alloc::boxed::Box;
use alloc::vec::Vec;
use thiserror::Error;

use crate::demand::DemandProfile;
use crate::frame::{BeliefError, ObserveError};
use crate::metrics::{CostCoefficients, MetricsRecorder, StepMetrics};
use crate::network::Network;
use crate::signal::{ControlMode, SignalAction};
use crate::sim::{SimConfig, SimError, SimState, StepEvents};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("forecast needs a demand belief")]
    MissingBelief,
    #[error("action sequence is infeasible at step {0}")]
    InfeasibleSequence(usize),
    #[error("controller for intersection {intersection}: {reason}")]
    Config { intersection: usize, reason: &'static str },
}

/// Everything a controller may look at when deciding for one intersection.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub net: &'a Network,
    pub cfg: &'a SimConfig,
    pub state: &'a SimState,
    /// The true demand profile; only oracle forecasters read it.
    pub demand: &'a DemandProfile,
    /// Events of the previous step, if any.
    pub last: Option<&'a StepEvents>,
    pub intersection: usize,
}

pub trait SignalController {
    /// How the intersection is driven; fixed for the episode.
    fn mode(&self) -> ControlMode;

    /// Action for the coming step.
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError>;
}

/// Controller of a cycle-planned intersection; the plan drives the signal.
#[derive(Debug, Clone)]
pub struct PlanFollower(pub crate::signal::CyclePlan);

impl SignalController for PlanFollower {
    fn mode(&self) -> ControlMode {
        ControlMode::Cycle(self.0.clone())
    }

    fn decide(&mut self, _: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        Ok(SignalAction::Extend)
    }
}

pub type BoxedController = Box<dyn SignalController + Send>;

impl<C: SignalController + ?Sized> SignalController for Box<C> {
    fn mode(&self) -> ControlMode {
        (**self).mode()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<SignalAction, ControlError> {
        (**self).decide(ctx)
    }
}

pub fn control_modes<C: SignalController>(controllers: &[C]) -> Vec<ControlMode> {
    controllers.iter().map(|c| c.mode()).collect()
}

/// One step of the loop as seen by an observer.
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub events: &'a StepEvents,
    pub metrics: &'a [StepMetrics],
    pub actions: &'a [SignalAction],
    pub state: &'a SimState,
}

/// Runs the closed loop until the horizon: every step each controller
/// decides, the simulator advances, and `observer` sees the outcome.
pub fn drive<C, F>(
    net: &Network,
    cfg: &SimConfig,
    demand: &DemandProfile,
    state: &mut SimState,
    controllers: &mut [C],
    coeffs: CostCoefficients,
    mut observer: F,
) -> Result<(), ControlError>
where
    C: SignalController,
    F: FnMut(&StepRecord<'_>),
{
    let mut recorder = MetricsRecorder::new(net.n_intersections(), coeffs);
    let mut last: Option<StepEvents> = None;
    while state.t < cfg.horizon {
        let mut actions = Vec::with_capacity(controllers.len());
        for (i, c) in controllers.iter_mut().enumerate() {
            let ctx = DecisionContext { net, cfg, state, demand, last: last.as_ref(), intersection: i };
            actions.push(c.decide(&ctx)?);
        }
        let events = crate::sim::step(net, cfg, state, &actions, crate::sim::Arrivals::FromProfile(demand))?;
        let metrics = recorder.record(net, cfg, state);
        observer(&StepRecord { events: &events, metrics: &metrics, actions: &actions, state });
        last = Some(events);
    }
    Ok(())
}
