//! Goal reaching from offline, reward-free data.
//!
//! A goal-conditioned Q-function trained with hindsight relabeling and
//! nearest-neighbour negative goals serves as a dynamical distance. A learned
//! forward model predicts where candidate action sequences lead, and a CEM
//! model-predictive controller picks the sequence whose predicted terminal
//! state is closest to the goal under that distance.
//!
//! Exact tabular references for the gridworld ([`oracle`]) make the
//! distance-learning core checkable.

pub mod approx;
pub mod baselines;
pub mod config;
pub mod data;
pub mod distance;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod oracle;
pub mod planner;
pub mod rng;

pub use approx::{Activation, AdamConfig, AdamState, Mlp};
pub use config::{Config, Difficulty};
pub use data::{OfflineDataset, RelabeledBatch, Trajectory};
pub use distance::{DistanceConfig, GoalCritic, QEnsemble};
pub use dynamics::{Dynamics, ExactModel, ForwardModel};
pub use env::{EnvConfig, EnvKind, EnvState, Observation};
pub use error::{Error, Result};
pub use eval::{BenchReport, Method, TaskSet};
pub use planner::{CemConfig, PlanResult};
