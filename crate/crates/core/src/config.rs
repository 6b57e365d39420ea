//! Experiment configuration shared by the trainer and the command line.
//!
//! Every section fills missing keys from its defaults and rejects unknown
//! keys. [`ExperimentConfig::validate`] checks value domains; nothing is
//! run with an unvalidated config.

use serde::{Deserialize, Serialize};

use crate::approx::OptimizerKind;
use crate::env::EnvConfig;
use crate::error::{Error, Result};

/// Algorithm variant. Everything except `Full` is an ablation expressed as
/// overrides of the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Contexts are always zero; no board reads or writes.
    NoBlackboard,
    /// Every agent writes every step.
    AlwaysWrite,
    /// Hazard loss coefficient forced to zero.
    NoHazardLoss,
    /// Lagrangian MAPPO: no board, no hazard loss, no write penalty.
    MappoLag,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [
        Variant::Full,
        Variant::NoBlackboard,
        Variant::AlwaysWrite,
        Variant::NoHazardLoss,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBlackboard => "no-blackboard",
            Variant::AlwaysWrite => "always-write",
            Variant::NoHazardLoss => "no-hazard-loss",
            Variant::MappoLag => "mappo-lag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    /// Environment steps summed over instances.
    pub total_steps: u64,
    pub num_envs: usize,
    /// Steps per instance per iteration.
    pub rollout_len: usize,
    pub seeds: Vec<u64>,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Added to the run seed to seed evaluation instances.
    pub eval_seed_offset: u64,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            total_steps: 3_000_000,
            num_envs: 16,
            rollout_len: 512,
            seeds: vec![0, 1, 2],
            eval_interval: 16_000,
            eval_episodes: 10,
            eval_seed_offset: 1_000_003,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub target_kl: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub optimizer: OptimizerKind,
    pub hidden_size: usize,
    pub hidden_layers: usize,
    pub share_actor_params: bool,
    pub log_std_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.96,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            target_kl: 0.016,
            epochs: 10,
            minibatches: 2,
            actor_lr: 5e-4,
            critic_lr: 5e-3,
            entropy_coef: 0.0,
            max_grad_norm: 10.0,
            optimizer: OptimizerKind::Adam,
            hidden_size: 64,
            hidden_layers: 2,
            share_actor_params: false,
            log_std_init: 0.5f64.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    pub cost_budget: f64,
    pub lambda_init: f64,
    pub step_size: f64,
    pub lambda_max: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            cost_budget: 25.0,
            lambda_init: 0.1,
            step_size: 5e-4,
            lambda_max: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackboardConfig {
    pub k: usize,
    pub d_msg: usize,
    pub embed_dim: usize,
    pub adaptive: bool,
    pub tau_init: f64,
    pub target_rate: f64,
    pub threshold_lr: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub ema_beta: f64,
    pub write_penalty: f64,
}

impl Default for BlackboardConfig {
    fn default() -> Self {
        Self {
            k: 3,
            d_msg: 16,
            embed_dim: 64,
            adaptive: true,
            tau_init: 0.10,
            target_rate: 0.05,
            threshold_lr: 0.05,
            tau_min: 0.05,
            tau_max: 0.95,
            ema_beta: 0.99,
            write_penalty: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardConfig {
    pub delta: f64,
    pub horizon: usize,
    pub loss_coef: f64,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            horizon: 8,
            loss_coef: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub dual: DualConfig,
    pub blackboard: BlackboardConfig,
    pub hazard: HazardConfig,
}

fn unit_open(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must lie in (0, 1)")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must be positive")))
    }
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} must be nonnegative")))
    }
}

fn at_least_one(field: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(field, "must be at least 1"))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.total_steps == 0 {
            return Err(Error::config("run.total_steps", "must be positive"));
        }
        at_least_one("run.num_envs", r.num_envs)?;
        at_least_one("run.rollout_len", r.rollout_len)?;
        at_least_one("run.eval_episodes", r.eval_episodes)?;
        if r.eval_interval == 0 {
            return Err(Error::config("run.eval_interval", "must be positive"));
        }
        if r.seeds.is_empty() {
            return Err(Error::config("run.seeds", "need at least one seed"));
        }
        let mut seen = r.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != r.seeds.len() {
            return Err(Error::config("run.seeds", "seeds must be distinct"));
        }

        match &self.env {
            EnvConfig::CorridorVelocity(c) => c.validate()?,
            EnvConfig::HazardGoals(c) => c.validate()?,
        }

        let t = &self.train;
        unit_open("train.gamma", t.gamma)?;
        if !(0.0..=1.0).contains(&t.gae_lambda) {
            return Err(Error::config("train.gae_lambda", "must lie in [0, 1]"));
        }
        unit_open("train.clip_eps", t.clip_eps)?;
        positive("train.target_kl", t.target_kl)?;
        at_least_one("train.epochs", t.epochs)?;
        at_least_one("train.minibatches", t.minibatches)?;
        if t.minibatches > r.rollout_len * r.num_envs {
            return Err(Error::config("train.minibatches", "more minibatches than samples"));
        }
        nonneg("train.actor_lr", t.actor_lr)?;
        nonneg("train.critic_lr", t.critic_lr)?;
        nonneg("train.entropy_coef", t.entropy_coef)?;
        positive("train.max_grad_norm", t.max_grad_norm)?;
        at_least_one("train.hidden_size", t.hidden_size)?;
        at_least_one("train.hidden_layers", t.hidden_layers)?;
        if !(crate::approx::LOG_STD_MIN..=crate::approx::LOG_STD_MAX).contains(&t.log_std_init) {
            return Err(Error::config("train.log_std_init", "outside the log-std clamp"));
        }

        let d = &self.dual;
        nonneg("dual.cost_budget", d.cost_budget)?;
        nonneg("dual.lambda_init", d.lambda_init)?;
        nonneg("dual.step_size", d.step_size)?;
        positive("dual.lambda_max", d.lambda_max)?;
        if d.lambda_init > d.lambda_max {
            return Err(Error::config("dual.lambda_init", "exceeds dual.lambda_max"));
        }

        let b = &self.blackboard;
        at_least_one("blackboard.k", b.k)?;
        at_least_one("blackboard.d_msg", b.d_msg)?;
        at_least_one("blackboard.embed_dim", b.embed_dim)?;
        unit_open("blackboard.target_rate", b.target_rate)?;
        positive("blackboard.threshold_lr", b.threshold_lr)?;
        unit_open("blackboard.ema_beta", b.ema_beta)?;
        if !(0.0 <= b.tau_min && b.tau_min <= b.tau_max && b.tau_max <= 1.0) {
            return Err(Error::config("blackboard.tau_min", "need 0 <= tau_min <= tau_max <= 1"));
        }
        if !(b.tau_min..=b.tau_max).contains(&b.tau_init) {
            return Err(Error::config("blackboard.tau_init", "outside [tau_min, tau_max]"));
        }
        nonneg("blackboard.write_penalty", b.write_penalty)?;

        let h = &self.hazard;
        positive("hazard.delta", h.delta)?;
        nonneg("hazard.loss_coef", h.loss_coef)?;
        Ok(())
    }

    pub fn blackboard_enabled(&self) -> bool {
        !matches!(self.run.variant, Variant::NoBlackboard | Variant::MappoLag)
    }

    pub fn force_write(&self) -> bool {
        self.run.variant == Variant::AlwaysWrite
    }

    pub fn hazard_coef(&self) -> f64 {
        match self.run.variant {
            Variant::NoHazardLoss | Variant::MappoLag => 0.0,
            _ => self.hazard.loss_coef,
        }
    }

    pub fn write_coef(&self) -> f64 {
        match self.run.variant {
            Variant::MappoLag => 0.0,
            _ => self.blackboard.write_penalty,
        }
    }

    /// Whether the message/hazard head participates at all.
    pub fn uses_message_head(&self) -> bool {
        self.blackboard_enabled() || self.hazard_coef() > 0.0
    }

    pub fn context_len(&self) -> usize {
        self.blackboard.k * crate::blackboard::BlackboardEntry::slot_width(self.blackboard.d_msg)
    }

    pub fn iterations(&self) -> u64 {
        let per_iter = (self.run.rollout_len * self.run.num_envs) as u64;
        self.run.total_steps.div_ceil(per_iter).max(1)
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.run.variant = variant;
        c
    }
}
