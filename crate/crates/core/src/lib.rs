//! Constrained cooperative multi-agent policy optimization with a
//! hazard-gated shared blackboard.
//!
//! The crate is organised bottom-up:
//!
//! - [`env`]: the constrained Markov game interface, two desk-scale
//!   environments and a vectorized runner with auto-reset.
//! - [`blackboard`]: per-instance shared memory with gated writes, cosine
//!   top-k reads and the adaptive write-threshold controller.
//! - [`hazard`]: instantaneous hazard events and lookahead labels.
//! - [`approx`]: small MLPs with hand-written backpropagation, the message
//!   head, memory encoder, policies and critics.
//! - [`trainer`]: rollout collection, advantage estimation, the constrained
//!   actor loss and the primal-dual update.
//! - [`metrics`]: episodic aggregation and checkpoint-level safety metrics.
//! - [`config`]: the experiment configuration shared by the trainer and CLI.

pub mod approx;
pub mod blackboard;
pub mod config;
pub mod env;
pub mod error;
pub mod hazard;
pub mod metrics;
pub mod trainer;

pub use blackboard::{Blackboard, BlackboardEntry, MemoryContext, ThresholdState};
pub use config::{ExperimentConfig, Variant};
pub use env::{Action, ActionSpace, EnvSpec, MultiAgentEnv, StepOutcome, VecEnv};
pub use error::{Error, Result};
pub use hazard::{HazardLabelConfig, HazardLabels};
pub use metrics::{EvalCheckpoint, MetricsReport};
pub use trainer::{DualState, LossBreakdown, RolloutBuffer, Trainer};
