//! Tabular Q-learning and linear-softmax REINFORCE over factored observations.

pub mod env;
pub mod policy;
pub mod qlearn;

pub use env::{Environment, MdpEnvironment, SimEnvironment, StepOutcome};
pub use policy::{reinforce_gradient, reinforce_update, SoftmaxPolicy, Trajectory};
pub use qlearn::{epsilon_greedy, q_learning_train, q_update, state_key, AlphaSchedule, EpsilonSchedule, KeyBins, QTable, StateKey};
