//! Rollout collection, advantage estimation and the primal-dual update.

mod buffer;
mod dual;
mod loss;
mod model;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use buffer::{compute_gae, RolloutBuffer, Transition, NO_SENDER};
pub use dual::DualState;
pub use loss::{
    actor_loss, clip_surrogate, critic_loss, hybrid_advantage, log_probs, normalize, wbce, LossBreakdown, LossWeights, Minibatch,
};
pub use model::{
    contexts_from_senders, critic_values, decide, policy_kind, to_env_action, Counters, Model, ModelCheckpoint, ModelGrads,
    ModuleCheckpoint, Protocol, StepDecision,
};

use crate::approx::{clip_grad_norm, Optimizer};
use crate::blackboard::{Blackboard, ThresholdState};
use crate::config::ExperimentConfig;
use crate::env::{EnvSpec, VecEnv};
use crate::error::{Error, Result};
use crate::hazard::HazardLabelConfig;
use crate::metrics::{self, EvalCheckpoint, MetricsReport};

/// Per-iteration diagnostics, one `progress.csv` row each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_ep_return: f64,
    pub mean_ep_cost: f64,
    pub episodes: usize,
    pub lambda: f64,
    pub tau: f64,
    pub write_rate: f64,
    pub context_occupancy: f64,
    pub hazard_event_rate: f64,
    pub hazard_label_rate: f64,
    pub wbce: f64,
    pub clip_loss: f64,
    pub write_penalty: f64,
    pub entropy: f64,
    pub critic_loss_r: f64,
    pub critic_loss_c: f64,
    pub approx_kl: f64,
    pub epochs_run: usize,
    pub cost_estimate: f64,
}

/// What one rollout produced besides the transitions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutSummary {
    /// `(return, cost)` of every episode that finished during the rollout.
    pub episodes: Vec<(f64, f64)>,
    pub write_rate: f64,
    /// Mean fraction of the `k` context slots that were filled.
    pub context_occupancy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateSummary {
    pub losses: LossBreakdown,
    pub epochs_run: usize,
    pub minibatch_updates: usize,
    /// Set when a non-finite loss stopped the update.
    pub non_finite: Option<String>,
}

/// Receives training records as they are produced.
pub trait Observer {
    fn on_iteration(&mut self, _stats: &IterationStats) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _checkpoint: &EvalCheckpoint) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// One seed's training state.
pub struct Trainer {
    cfg: ExperimentConfig,
    seed: u64,
    spec: EnvSpec,
    rng: ChaCha8Rng,
    model: Model,
    optimizers: Vec<Optimizer>,
    runner: VecEnv,
    board: Option<Blackboard>,
    threshold: ThresholdState,
    dual: DualState,
    cost_estimate: f64,
    env_steps: u64,
    iteration: u64,
    next_eval: u64,
    counters: Counters,
    ep_return: Vec<f64>,
    ep_cost: Vec<f64>,
    checkpoints: Vec<EvalCheckpoint>,
}

fn threshold_from(cfg: &ExperimentConfig) -> ThresholdState {
    let b = &cfg.blackboard;
    ThresholdState::new(b.tau_init, b.target_rate, b.threshold_lr, b.ema_beta, (b.tau_min, b.tau_max), b.adaptive)
}

fn protocol_from(cfg: &ExperimentConfig) -> Protocol {
    Protocol {
        k: cfg.blackboard.k,
        force_write: cfg.force_write(),
    }
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_envs = cfg.run.num_envs;
        let env_seeds: Vec<u64> = (0..num_envs).map(|_| rng.random()).collect();
        let runner = VecEnv::from_config(&cfg.env, cfg.dual.cost_budget, &env_seeds)?;
        let spec = runner.spec().clone();
        let model = Model::new(&cfg, &spec, &mut rng);
        let optimizers = Self::build_optimizers(&cfg, &model);
        let board = cfg
            .blackboard_enabled()
            .then(|| Blackboard::new(num_envs, spec.n_agents, cfg.blackboard.d_msg));
        let d = &cfg.dual;
        Ok(Self {
            dual: DualState::new(d.lambda_init, d.step_size, d.cost_budget, d.lambda_max),
            cost_estimate: 0.0,
            threshold: threshold_from(&cfg),
            next_eval: cfg.run.eval_interval,
            seed,
            spec,
            rng,
            model,
            optimizers,
            runner,
            board,
            env_steps: 0,
            iteration: 0,
            counters: Counters::default(),
            ep_return: vec![0.0; num_envs],
            ep_cost: vec![0.0; num_envs],
            checkpoints: Vec::new(),
            cfg,
        })
    }

    fn build_optimizers(cfg: &ExperimentConfig, model: &Model) -> Vec<Optimizer> {
        let t = &cfg.train;
        let slices = model.param_slices();
        let n_policy = slices.len() - 2;
        slices
            .iter()
            .enumerate()
            .map(|(i, s)| Optimizer::new(t.optimizer, if i < n_policy { t.actor_lr } else { t.critic_lr }, s.len()))
            .collect()
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Replacing parameters does not reset optimizer moments.
    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn dual(&self) -> &DualState {
        &self.dual
    }

    pub fn threshold(&self) -> &ThresholdState {
        &self.threshold
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn checkpoints(&self) -> &[EvalCheckpoint] {
        &self.checkpoints
    }

    pub fn cost_estimate(&self) -> f64 {
        self.cost_estimate
    }

    /// Instrumentation counters of the optional code paths.
    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn label_config(&self) -> HazardLabelConfig {
        HazardLabelConfig {
            delta: self.cfg.hazard.delta,
            horizon: self.cfg.hazard.horizon,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            clip_eps: self.cfg.train.clip_eps,
            write: self.cfg.write_coef(),
            hazard: self.cfg.hazard_coef(),
            entropy: self.cfg.train.entropy_coef,
            fresh_contexts: self.cfg.blackboard_enabled(),
        }
    }

    /// Collects one rollout and seals the buffer with labels and advantages.
    pub fn collect(&mut self) -> Result<(RolloutBuffer, RolloutSummary)> {
        let n = self.spec.n_agents;
        let num_envs = self.runner.num_envs();
        let steps = self.cfg.run.rollout_len;
        let kind = policy_kind(&self.spec.action_space);
        let mut buf = RolloutBuffer::new(
            steps,
            num_envs,
            n,
            self.spec.obs_dim,
            kind.action_width(),
            self.cfg.blackboard.k,
            self.cfg.context_len(),
        );
        let protocol = protocol_from(&self.cfg);
        let mut summary = RolloutSummary::default();
        let mut writes = 0usize;
        let mut filled = 0usize;

        for _ in 0..steps {
            let obs = self.runner.observations().to_vec();
            let decision = decide(
                &self.model,
                &obs,
                self.board.as_mut(),
                &mut self.threshold,
                protocol,
                &mut self.counters,
                Some(&mut self.rng),
            )?;
            let v_r = critic_values(&self.model.critic_r, &obs)?;
            let v_c = critic_values(&self.model.critic_c, &obs)?;
            let joint: Vec<Vec<_>> = (0..num_envs)
                .map(|e| (0..n).map(|i| to_env_action(&self.spec.action_space, &decision.actions[e * n + i])).collect())
                .collect();
            let step = self.runner.step(&joint)?;
            self.env_steps += num_envs as u64;

            let truncated_envs: Vec<usize> = (0..num_envs)
                .filter(|&e| step.outcomes[e].truncated && !step.outcomes[e].terminated)
                .collect();
            let mut trunc_r = vec![0.0; num_envs * n];
            let mut trunc_c = vec![0.0; num_envs * n];
            if !truncated_envs.is_empty() {
                let terminal: Vec<Vec<Vec<f64>>> = truncated_envs.iter().map(|&e| step.outcomes[e].next_obs.clone()).collect();
                let tr = critic_values(&self.model.critic_r, &terminal)?;
                let tc = critic_values(&self.model.critic_c, &terminal)?;
                for (k, &e) in truncated_envs.iter().enumerate() {
                    trunc_r[e * n..(e + 1) * n].copy_from_slice(&tr[k * n..(k + 1) * n]);
                    trunc_c[e * n..(e + 1) * n].copy_from_slice(&tc[k * n..(k + 1) * n]);
                }
            }

            for e in 0..num_envs {
                let out = &step.outcomes[e];
                for i in 0..n {
                    let r = e * n + i;
                    buf.push(Transition {
                        obs: &obs[e][i],
                        context: &decision.contexts[r],
                        senders: &decision.senders[r],
                        action: &decision.actions[r],
                        log_prob: decision.log_probs[r],
                        reward: out.rewards[i],
                        cost: out.costs[i],
                        value_r: v_r[r],
                        value_c: v_c[r],
                        logit: decision.logits[r],
                        write: decision.writes[r],
                        truncation_r: trunc_r[r],
                        truncation_c: trunc_c[r],
                    })?;
                    writes += decision.writes[r] as usize;
                    filled += decision.occupancy[r];
                }
                self.ep_return[e] += out.rewards.iter().sum::<f64>() / n as f64;
                self.ep_cost[e] += out.costs.iter().sum::<f64>() / n as f64;
                if out.done() {
                    summary.episodes.push((self.ep_return[e], self.ep_cost[e]));
                    self.ep_return[e] = 0.0;
                    self.ep_cost[e] = 0.0;
                }
            }
            let terminated: Vec<bool> = step.outcomes.iter().map(|o| o.terminated).collect();
            let truncated: Vec<bool> = step.outcomes.iter().map(|o| o.truncated).collect();
            buf.end_step(&terminated, &truncated)?;
            if let Some(board) = self.board.as_mut() {
                for notice in &step.resets {
                    board.clear(notice.env);
                    self.counters.board_clears += 1;
                }
            }
        }

        let obs = self.runner.observations().to_vec();
        let last_r = critic_values(&self.model.critic_r, &obs)?;
        let last_c = critic_values(&self.model.critic_c, &obs)?;
        let labels = self.cfg.uses_message_head().then(|| self.label_config());
        if labels.is_some() {
            self.counters.label_passes += 1;
        }
        buf.finalize(last_r, last_c, self.cfg.train.gamma, self.cfg.train.gae_lambda, labels.as_ref())?;

        let rows = buf.rows().max(1) as f64;
        summary.write_rate = writes as f64 / rows;
        summary.context_occupancy = filled as f64 / (rows * self.cfg.blackboard.k as f64);
        Ok((buf, summary))
    }

    /// Epochs of minibatch updates on a sealed buffer. The dual variable is
    /// not touched.
    pub fn update(&mut self, buf: &RolloutBuffer) -> Result<UpdateSummary> {
        let mut adv = hybrid_advantage(&buf.adv_r, &buf.adv_c, self.dual.lambda);
        normalize(&mut adv);
        let weights = self.loss_weights();
        let t = self.cfg.train.clone();
        let samples = buf.samples();
        let chunk = samples.div_ceil(t.minibatches);
        let mut order: Vec<usize> = (0..samples).collect();
        let mut grads = self.model.zero_grads();
        let mut summary = UpdateSummary::default();
        let mut sums = LossBreakdown::default();

        for _ in 0..t.epochs {
            order.shuffle(&mut self.rng);
            let mut kl_sum = 0.0;
            let mut batches = 0usize;
            for idx in order.chunks(chunk) {
                let mb = Minibatch::gather(buf, &self.model, idx, &adv)?;
                grads.zero();
                let mut l = actor_loss(&self.model, &mb, &weights, &mut self.counters, Some(&mut grads))?;
                let (cr, cc) = critic_loss(&self.model, &mb, Some(&mut grads))?;
                l.critic_r = cr;
                l.critic_c = cc;
                if !l.is_finite() {
                    summary.losses = l;
                    summary.non_finite = Some(format!(
                        "loss at iteration {}, epoch {}: {:?}",
                        self.iteration, summary.epochs_run, l
                    ));
                    return Ok(summary);
                }
                self.apply(&mut grads);
                accumulate(&mut sums, &l);
                kl_sum += l.approx_kl;
                batches += 1;
                summary.minibatch_updates += 1;
            }
            summary.epochs_run += 1;
            if kl_sum / batches as f64 > t.target_kl {
                break;
            }
        }
        summary.losses = scaled(&sums, 1.0 / summary.minibatch_updates.max(1) as f64, &weights);
        Ok(summary)
    }

    fn apply(&mut self, grads: &mut ModelGrads) {
        let max_norm = self.cfg.train.max_grad_norm;
        let mut slices = grads.slices_mut();
        let n_policy = slices.len() - 2;
        let (policy, critics) = slices.split_at_mut(n_policy);
        clip_grad_norm(&mut policy.iter_mut().map(|s| &mut **s).collect::<Vec<_>>(), max_norm);
        clip_grad_norm(&mut critics.iter_mut().map(|s| &mut **s).collect::<Vec<_>>(), max_norm);
        for ((opt, params), g) in self.optimizers.iter_mut().zip(self.model.param_slices_mut()).zip(slices.iter()) {
            opt.step(params, g);
        }
    }

    /// Collect, update, adjust the dual variable and evaluate when due.
    pub fn train_iteration(&mut self, observer: &mut dyn Observer) -> Result<IterationStats> {
        let (buf, rollout) = self.collect()?;
        let update = self.update(&buf)?;
        if !rollout.episodes.is_empty() {
            self.cost_estimate = rollout.episodes.iter().map(|e| e.1).sum::<f64>() / rollout.episodes.len() as f64;
        }
        if update.non_finite.is_none() {
            self.dual.update(self.cost_estimate);
        }
        self.iteration += 1;

        let mean = |f: fn(&(f64, f64)) -> f64| {
            if rollout.episodes.is_empty() {
                f64::NAN
            } else {
                rollout.episodes.iter().map(f).sum::<f64>() / rollout.episodes.len() as f64
            }
        };
        let rate = |v: &[bool]| if v.is_empty() { 0.0 } else { v.iter().filter(|&&b| b).count() as f64 / v.len() as f64 };
        let l = update.losses;
        let stats = IterationStats {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_ep_return: mean(|e| e.0),
            mean_ep_cost: mean(|e| e.1),
            episodes: rollout.episodes.len(),
            lambda: self.dual.lambda,
            tau: self.threshold.tau,
            write_rate: rollout.write_rate,
            context_occupancy: rollout.context_occupancy,
            hazard_event_rate: rate(&buf.z),
            hazard_label_rate: rate(&buf.h),
            wbce: l.wbce,
            clip_loss: l.clip,
            write_penalty: l.write_term,
            entropy: l.entropy,
            critic_loss_r: l.critic_r,
            critic_loss_c: l.critic_c,
            approx_kl: l.approx_kl,
            epochs_run: update.epochs_run,
            cost_estimate: self.cost_estimate,
        };
        observer.on_iteration(&stats)?;
        if let Some(msg) = update.non_finite {
            return Err(Error::NonFinite(msg));
        }
        if self.env_steps >= self.next_eval {
            self.checkpoint_now(observer)?;
            while self.next_eval <= self.env_steps {
                self.next_eval += self.cfg.run.eval_interval;
            }
        }
        Ok(stats)
    }

    fn checkpoint_now(&mut self, observer: &mut dyn Observer) -> Result<()> {
        let episodes = self.evaluate()?;
        let cp = EvalCheckpoint::from_episodes(self.env_steps, episodes, self.cfg.dual.cost_budget)?;
        observer.on_checkpoint(&cp)?;
        self.checkpoints.push(cp);
        Ok(())
    }

    /// Deterministic evaluation of the current policy.
    pub fn evaluate(&mut self) -> Result<Vec<(f64, f64)>> {
        let seed = self.seed.wrapping_add(self.cfg.run.eval_seed_offset);
        evaluate(&self.model, &self.cfg, self.threshold.tau, seed, &mut self.counters)
    }

    /// Trains for the configured number of iterations, evaluating on the
    /// configured interval and once more at the end if the last iteration
    /// was not already evaluated.
    pub fn run(&mut self, observer: &mut dyn Observer) -> Result<MetricsReport> {
        for _ in 0..self.cfg.iterations() {
            self.train_iteration(observer)?;
        }
        if self.checkpoints.last().map(|c| c.step) != Some(self.env_steps) {
            self.checkpoint_now(observer)?;
        }
        metrics::report(&self.checkpoints, self.cfg.dual.cost_budget)
    }
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.clip += l.clip;
    acc.write_term += l.write_term;
    acc.wbce += l.wbce;
    acc.entropy += l.entropy;
    acc.critic_r += l.critic_r;
    acc.critic_c += l.critic_c;
    acc.approx_kl += l.approx_kl;
}

fn scaled(acc: &LossBreakdown, s: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        clip: acc.clip * s,
        write_term: acc.write_term * s,
        write_coef: w.write,
        wbce: acc.wbce * s,
        hazard_coef: w.hazard,
        entropy: acc.entropy * s,
        entropy_coef: w.entropy,
        critic_r: acc.critic_r * s,
        critic_c: acc.critic_c * s,
        approx_kl: acc.approx_kl * s,
    }
}

/// Runs `run.eval_episodes` episodes with mode actions, one per instance,
/// seeded `seed, seed + 1, ...`. The write threshold is held at `tau`.
/// Returns `(return, cost)` per episode.
pub fn evaluate(model: &Model, cfg: &ExperimentConfig, tau: f64, seed: u64, counters: &mut Counters) -> Result<Vec<(f64, f64)>> {
    let episodes = cfg.run.eval_episodes;
    let seeds: Vec<u64> = (0..episodes as u64).map(|j| seed.wrapping_add(j)).collect();
    let mut runner = VecEnv::from_config(&cfg.env, cfg.dual.cost_budget, &seeds)?;
    let n = runner.spec().n_agents;
    let space = runner.spec().action_space.clone();
    let mut board = cfg.blackboard_enabled().then(|| Blackboard::new(episodes, n, cfg.blackboard.d_msg));
    let mut threshold = threshold_from(cfg);
    threshold.tau = tau;
    threshold.adaptive = false;
    let protocol = protocol_from(cfg);
    let mut totals = vec![(0.0, 0.0); episodes];
    let mut finished = vec![false; episodes];
    while finished.iter().any(|f| !f) {
        let obs = runner.observations().to_vec();
        let d = decide(model, &obs, board.as_mut(), &mut threshold, protocol, counters, None)?;
        let joint: Vec<Vec<_>> = (0..episodes)
            .map(|e| (0..n).map(|i| to_env_action(&space, &d.actions[e * n + i])).collect())
            .collect();
        let step = runner.step(&joint)?;
        for (e, out) in step.outcomes.iter().enumerate() {
            if finished[e] {
                continue;
            }
            totals[e].0 += out.rewards.iter().sum::<f64>() / n as f64;
            totals[e].1 += out.costs.iter().sum::<f64>() / n as f64;
            finished[e] = out.done();
        }
        if let Some(board) = board.as_mut() {
            for notice in &step.resets {
                board.clear(notice.env);
                counters.board_clears += 1;
            }
        }
    }
    Ok(totals)
}
