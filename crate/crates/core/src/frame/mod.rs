//! Factored observations, demand beliefs, state encoders and the tabular
//! MDP oracle that every learner and planner is checked against.

pub mod belief;
pub mod encode;
pub mod fixture;
pub mod mdp;
pub mod observe;

pub use belief::{belief_update, BeliefError, DemandBelief};
pub use mdp::{policy_evaluation, value_iteration, MdpError, TabularMdp, ValueIteration};
pub use observe::{observe, BoundaryConfig, DesignLevel, FactoredState, IntersectionFeatures, ObserveError};
