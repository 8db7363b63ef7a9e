//! Traffic-signal-control workbench core.
//!
//! A seedable mesoscopic queue-transmission simulator together with the
//! controller families commonly compared in signal control work (fixed-time,
//! actuated, max-pressure, tabular RL, policy gradient, rolling-horizon
//! optimization), the factored-observation machinery they share, and the
//! intersection/network/arterial evaluation criteria.
//!
//! The crate is `no_std` and only needs `alloc`. Scenario files, logs, the
//! experiment harness and the CLI live in the `tsc-lab` companion crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod classic;
pub mod control;
pub mod demand;
pub mod frame;
pub mod metrics;
pub mod network;
pub mod rho;
pub mod rl;
pub mod rng;
pub mod signal;
pub mod sim;

mod math;

pub use control::{ControlError, DecisionContext, SignalController};
pub use demand::{DemandProfile, DemandState, SourceDemand};
pub use network::{Network, NetworkError, NetworkSpec};
pub use signal::{ControlMode, CyclePlan, SignalAction, SignalMode, SignalState};
pub use sim::{FlowModel, SimConfig, SimError, SimState, StepEvents, VehicleRecord};
