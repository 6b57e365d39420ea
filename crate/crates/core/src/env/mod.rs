//! Constrained cooperative Markov game interface.
//!
//! Every environment emits one reward and one nonnegative cost per agent per
//! step. Team aggregation (agent mean, summed over time) happens in
//! [`crate::metrics`]; environments never aggregate.

mod corridor;
mod grid;

pub use corridor::{CorridorConfig, CorridorVelocityEnv};
pub use grid::{HazardGoalsConfig, HazardGoalsEnv};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-agent action space, identical for every agent.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Continuous { act_dim: usize, low: f64, high: f64 },
    Discrete { n_actions: usize },
}

impl ActionSpace {
    /// Width of the policy head: action dimension or number of logits.
    pub fn policy_width(&self) -> usize {
        match *self {
            ActionSpace::Continuous { act_dim, .. } => act_dim,
            ActionSpace::Discrete { n_actions } => n_actions,
        }
    }

    pub fn validate(&self, agent: usize, action: &Action) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidAction { agent, reason });
        match (self, action) {
            (ActionSpace::Continuous { act_dim, low, high }, Action::Continuous(a)) => {
                if a.len() != *act_dim {
                    return bad(format!("expected {act_dim} components, got {}", a.len()));
                }
                if let Some(v) = a.iter().find(|v| !v.is_finite() || **v < *low || **v > *high) {
                    return bad(format!("component {v} outside [{low}, {high}]"));
                }
                Ok(())
            }
            (ActionSpace::Discrete { n_actions }, Action::Discrete(k)) => {
                if *k >= *n_actions {
                    return bad(format!("index {k} out of range 0..{n_actions}"));
                }
                Ok(())
            }
            _ => bad("action kind does not match the action space".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
    pub cost_budget: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::config("env.n_agents", "must be positive"));
        }
        if self.obs_dim == 0 {
            return Err(Error::config("env.obs_dim", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be at least 1"));
        }
        if !(self.cost_budget >= 0.0) {
            return Err(Error::config("cost_budget", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_obs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub observations: Vec<Vec<f64>>,
    pub episode_id: u64,
}

pub trait MultiAgentEnv: Send {
    fn spec(&self) -> &EnvSpec;

    /// Reseeds the instance and samples a fresh initial state.
    fn reset(&mut self, seed: u64) -> ResetOutcome;

    /// Samples a fresh initial state from the instance's ongoing random stream.
    fn reset_next(&mut self) -> ResetOutcome;

    fn step(&mut self, actions: &[Action]) -> Result<StepOutcome>;

    /// Steps taken in the current episode.
    fn step_count(&self) -> usize;

    fn observations(&self) -> Vec<Vec<f64>>;
}

/// Environment selection as it appears in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    CorridorVelocity(CorridorConfig),
    HazardGoals(HazardGoalsConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::CorridorVelocity(CorridorConfig::default())
    }
}

impl EnvConfig {
    pub fn build(&self, cost_budget: f64) -> Result<Box<dyn MultiAgentEnv>> {
        Ok(match self {
            EnvConfig::CorridorVelocity(c) => Box::new(CorridorVelocityEnv::new(c.clone(), cost_budget)?),
            EnvConfig::HazardGoals(c) => Box::new(HazardGoalsEnv::new(c.clone(), cost_budget)?),
        })
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvConfig::CorridorVelocity(c) => c.horizon,
            EnvConfig::HazardGoals(c) => c.horizon,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            EnvConfig::CorridorVelocity(c) => c.n_agents,
            EnvConfig::HazardGoals(c) => c.n_agents,
        }
    }
}

/// Emitted when an instance finished its episode and was reset in place.
#[derive(Debug, Clone, PartialEq)]
pub struct ResetNotice {
    pub env: usize,
    pub episode_id: u64,
}

#[derive(Debug, Clone)]
pub struct VecStep {
    /// One outcome per instance. For finished instances `next_obs` is the
    /// terminal observation; the post-reset observation is in
    /// [`VecEnv::observations`].
    pub outcomes: Vec<StepOutcome>,
    pub resets: Vec<ResetNotice>,
}

/// E independent instances stepped in lockstep, reset in place when done.
///
/// Instances share nothing; each owns its random stream seeded at
/// construction.
pub struct VecEnv {
    envs: Vec<Box<dyn MultiAgentEnv>>,
    obs: Vec<Vec<Vec<f64>>>,
    episode_ids: Vec<u64>,
}

impl VecEnv {
    pub fn new(envs: Vec<Box<dyn MultiAgentEnv>>, seeds: &[u64]) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::config("num_envs", "must be positive"));
        }
        if envs.len() != seeds.len() {
            return Err(Error::shape("vec_env seeds", envs.len(), seeds.len()));
        }
        let spec = envs[0].spec().clone();
        if envs.iter().any(|e| *e.spec() != spec) {
            return Err(Error::config("env", "all instances must share one spec"));
        }
        let mut envs = envs;
        let mut obs = Vec::with_capacity(envs.len());
        let mut episode_ids = Vec::with_capacity(envs.len());
        for (env, &seed) in envs.iter_mut().zip(seeds) {
            let r = env.reset(seed);
            obs.push(r.observations);
            episode_ids.push(r.episode_id);
        }
        Ok(Self {
            envs,
            obs,
            episode_ids,
        })
    }

    pub fn from_config(cfg: &EnvConfig, cost_budget: f64, seeds: &[u64]) -> Result<Self> {
        let envs = seeds
            .iter()
            .map(|_| cfg.build(cost_budget))
            .collect::<Result<Vec<_>>>()?;
        Self::new(envs, seeds)
    }

    pub fn num_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }

    /// Current observations, indexed `[env][agent]`.
    pub fn observations(&self) -> &[Vec<Vec<f64>>] {
        &self.obs
    }

    pub fn episode_ids(&self) -> &[u64] {
        &self.episode_ids
    }

    pub fn step(&mut self, joint_actions: &[Vec<Action>]) -> Result<VecStep> {
        if joint_actions.len() != self.envs.len() {
            return Err(Error::shape(
                "vec_step joint actions",
                self.envs.len(),
                joint_actions.len(),
            ));
        }
        let mut outcomes = Vec::with_capacity(self.envs.len());
        let mut resets = Vec::new();
        for (e, (env, actions)) in self.envs.iter_mut().zip(joint_actions).enumerate() {
            let out = env.step(actions)?;
            if out.done() {
                let r = env.reset_next();
                self.obs[e] = r.observations;
                self.episode_ids[e] = r.episode_id;
                resets.push(ResetNotice {
                    env: e,
                    episode_id: r.episode_id,
                });
            } else {
                self.obs[e] = out.next_obs.clone();
            }
            outcomes.push(out);
        }
        Ok(VecStep { outcomes, resets })
    }
}
