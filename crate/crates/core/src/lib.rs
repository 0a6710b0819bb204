//! Graph policy gradients for unlabeled multi-robot motion planning.
//!
//! Robots share one graph convolutional policy: each robot's action depends
//! only on its own observations and those of robots a few hops away in a
//! proximity graph, so the same filter weights run on swarms of any size.
//! The policy is trained with REINFORCE and compared against a centralized
//! assignment-and-planning baseline.
//!
//! - [`world`]: simulator, sensing, coverage and rewards.
//! - [`graph`]: proximity graphs, shift operators and polynomial filters.
//! - [`gcn`]: the policy network with hand-written gradients.
//! - [`reinforce`]: rollouts, the gradient estimator, training and evaluation.
//! - [`capt`]: Hungarian assignment and synchronized straight-line plans.
//! - [`checkpoint`]: policy persistence.

pub mod capt;
pub mod checkpoint;
pub mod config;
pub mod gcn;
pub mod graph;
pub mod reinforce;
pub mod world;

pub use capt::{hungarian, Assignment, ComparisonReport, TrajectoryPlan};
pub use checkpoint::Checkpoint;
pub use config::ConfigError;
pub use gcn::{GcnParams, LayerSpec, PolicyDist};
pub use graph::{GraphConfig, ShiftOperator};
pub use reinforce::{EvalReport, Policy, TrainConfig, TrainLog};
pub use world::{FormationSpec, Point, WorldConfig, WorldState};
