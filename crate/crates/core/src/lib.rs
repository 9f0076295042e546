//! Lewis signaling games between agents that each live in their own copy of
//! an environment.
//!
//! The core types are generic over the reward scalar. Simulations normally run
//! on `f64`; integer or rational scalars give exact utility bookkeeping.

pub mod agent;
pub mod config;
pub mod env;
pub mod error;
pub mod experiment;
pub mod game;
pub mod metrics;
pub mod report;
pub mod scalar;

pub use agent::{AgentId, AgentPolicy, CandidateRule, SignalId};
pub use config::ExperimentConfig;
pub use env::{ActionId, StateId};
pub use error::{Error, Result};
pub use experiment::{run_batch, run_repetition, Batch, RunTrace};
pub use game::{EpisodeRecord, EpsilonSchedule, PairingPolicy};
pub use metrics::{Metric, MetricsCheckpoint, RunLabel};
pub use scalar::Scalar;

/// Default reward scalar.
pub type Reward = f64;
pub type Agent = agent::Agent<Reward>;
pub type RewardMatrix = env::RewardMatrix<Reward>;
pub type RewardFamily = env::RewardFamily<Reward>;

/// Integer rewards; utilities are tracked exactly.
pub type ExactReward = i64;
pub type ExactAgent = agent::Agent<ExactReward>;
pub type ExactRewardMatrix = env::RewardMatrix<ExactReward>;
pub type ExactRewardFamily = env::RewardFamily<ExactReward>;
