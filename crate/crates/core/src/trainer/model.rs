use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::approx::{Actor, ActorTape, Critic, MessageBatch, MessageHead, PolicyKind, TensorInfo};
use crate::blackboard::{gate, Blackboard, BlackboardEntry, ThresholdState};
use crate::config::ExperimentConfig;
use crate::env::{Action, ActionSpace, EnvSpec};
use crate::error::{Error, Result};

use super::buffer::NO_SENDER;

pub fn policy_kind(space: &ActionSpace) -> PolicyKind {
    match *space {
        ActionSpace::Continuous { act_dim, .. } => PolicyKind::Gaussian { act_dim },
        ActionSpace::Discrete { n_actions } => PolicyKind::Categorical { n_actions },
    }
}

/// Maps a stored policy sample to an environment action. Gaussian samples
/// are clipped to the bounds; the stored sample keeps its pre-clip value.
pub fn to_env_action(space: &ActionSpace, sample: &[f64]) -> Action {
    match *space {
        ActionSpace::Continuous { low, high, .. } => Action::Continuous(sample.iter().map(|a| a.clamp(low, high)).collect()),
        ActionSpace::Discrete { n_actions } => Action::Discrete((sample[0] as usize).min(n_actions - 1)),
    }
}

/// Every learned parameter of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub n_agents: usize,
    /// Absent when neither the blackboard nor the hazard loss is active.
    pub message: Option<MessageHead>,
    /// One actor per agent, or a single shared one.
    pub actors: Vec<Actor>,
    pub critic_r: Critic,
    pub critic_c: Critic,
}

/// Gradient buffers matching [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub message: Vec<f64>,
    pub actors: Vec<Vec<f64>>,
    pub critic_r: Vec<f64>,
    pub critic_c: Vec<f64>,
}

impl ModelGrads {
    pub fn zero(&mut self) {
        for g in self.slices_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.message];
        out.extend(self.actors.iter_mut().map(|a| a.as_mut_slice()));
        out.push(&mut self.critic_r);
        out.push(&mut self.critic_c);
        out
    }
}

impl Model {
    pub fn new(cfg: &ExperimentConfig, spec: &EnvSpec, rng: &mut impl Rng) -> Self {
        let t = &cfg.train;
        let b = &cfg.blackboard;
        let kind = policy_kind(&spec.action_space);
        let message = cfg.uses_message_head().then(|| {
            let mut m = MessageHead::new(spec.obs_dim, t.hidden_size, t.hidden_layers, b.d_msg);
            m.init(rng);
            m
        });
        let n_actors = if t.share_actor_params { 1 } else { spec.n_agents };
        let actors = (0..n_actors)
            .map(|_| {
                let mut a = Actor::new(spec.obs_dim, cfg.context_len(), b.embed_dim, t.hidden_size, t.hidden_layers, kind);
                a.init(rng, t.log_std_init);
                a
            })
            .collect();
        let mut critic_r = Critic::new(spec.n_agents, spec.obs_dim, t.hidden_size, t.hidden_layers);
        critic_r.init(rng);
        let mut critic_c = Critic::new(spec.n_agents, spec.obs_dim, t.hidden_size, t.hidden_layers);
        critic_c.init(rng);
        Self {
            n_agents: spec.n_agents,
            message,
            actors,
            critic_r,
            critic_c,
        }
    }

    pub fn actor(&self, agent: usize) -> &Actor {
        &self.actors[agent.min(self.actors.len() - 1)]
    }

    pub fn actor_index(&self, agent: usize) -> usize {
        agent.min(self.actors.len() - 1)
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            message: vec![0.0; self.message.as_ref().map_or(0, |m| m.params.len())],
            actors: self.actors.iter().map(|a| vec![0.0; a.params.len()]).collect(),
            critic_r: vec![0.0; self.critic_r.params.len()],
            critic_c: vec![0.0; self.critic_c.params.len()],
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.message.as_ref().map_or(&[][..], |m| &m.params)];
        out.extend(self.actors.iter().map(|a| a.params.as_slice()));
        out.push(&self.critic_r.params);
        out.push(&self.critic_c.params);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.message.as_mut().map_or(&mut [][..], |m| &mut m.params)];
        out.extend(self.actors.iter_mut().map(|a| a.params.as_mut_slice()));
        out.push(&mut self.critic_r.params);
        out.push(&mut self.critic_c.params);
        out
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        let mut modules = Vec::new();
        if let Some(m) = &self.message {
            modules.push(ModuleCheckpoint::new("message", m.describe(), &m.params));
        }
        for (i, a) in self.actors.iter().enumerate() {
            modules.push(ModuleCheckpoint::new(&format!("actor{i}"), a.describe(), &a.params));
        }
        modules.push(ModuleCheckpoint::new("critic_r", self.critic_r.describe("critic_r"), &self.critic_r.params));
        modules.push(ModuleCheckpoint::new("critic_c", self.critic_c.describe("critic_c"), &self.critic_c.params));
        ModelCheckpoint { modules }
    }

    /// Builds the architecture `cfg` describes and fills it from `ckpt`.
    pub fn from_checkpoint(cfg: &ExperimentConfig, ckpt: &ModelCheckpoint) -> Result<Self> {
        let spec = cfg.env.build(cfg.dual.cost_budget)?.spec().clone();
        let mut model = Self::new(cfg, &spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        model.load(ckpt)?;
        Ok(model)
    }

    /// Loads parameters into a model built from the same configuration.
    pub fn load(&mut self, ckpt: &ModelCheckpoint) -> Result<()> {
        let expected = self.checkpoint();
        if expected.modules.len() != ckpt.modules.len() {
            return Err(Error::shape("checkpoint modules", expected.modules.len(), ckpt.modules.len()));
        }
        for (want, got) in expected.modules.iter().zip(&ckpt.modules) {
            if want.name != got.name || want.tensors != got.tensors {
                return Err(Error::config("checkpoint", format!("module {} does not match the configuration", got.name)));
            }
            if want.params.len() != got.params.len() {
                return Err(Error::shape("checkpoint parameters", want.params.len(), got.params.len()));
            }
            if !got.params.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("checkpoint module {}", got.name)));
            }
        }
        for (dst, m) in self.param_slices_mut().into_iter().filter(|s| !s.is_empty()).zip(&ckpt.modules) {
            dst.copy_from_slice(&m.params);
        }
        Ok(())
    }
}

/// Flat parameters of one module plus the layout of the tensors inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleCheckpoint {
    pub name: String,
    pub tensors: Vec<TensorInfo>,
    pub params: Vec<f64>,
}

impl ModuleCheckpoint {
    fn new(name: &str, tensors: Vec<TensorInfo>, params: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            tensors,
            params: params.to_vec(),
        }
    }
}

/// Serializable model parameters. Each tensor is stored row-major at its
/// offset inside the module's flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub modules: Vec<ModuleCheckpoint>,
}

/// Everything decided for one vectorized step, laid out `env * n + agent`.
#[derive(Debug, Clone)]
pub struct StepDecision {
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub contexts: Vec<Vec<f64>>,
    pub senders: Vec<Vec<usize>>,
    pub logits: Vec<f64>,
    pub writes: Vec<bool>,
    pub occupancy: Vec<usize>,
}

/// Per-step communication switches derived from the experiment variant.
#[derive(Debug, Clone, Copy)]
pub struct Protocol {
    pub k: usize,
    pub force_write: bool,
}

/// Instrumentation of the optional code paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub message_forwards: u64,
    pub board_writes: u64,
    pub board_reads: u64,
    pub board_clears: u64,
    pub label_passes: u64,
    pub wbce_grad_passes: u64,
}

/// Runs write-info, gate & write, adapt, read and act for every agent of
/// every instance. `obs` is indexed `[env][agent]`.
pub fn decide(
    model: &Model,
    obs: &[Vec<Vec<f64>>],
    board: Option<&mut Blackboard>,
    threshold: &mut ThresholdState,
    protocol: Protocol,
    counters: &mut Counters,
    sample: Option<&mut dyn rand::RngCore>,
) -> Result<StepDecision> {
    let n = model.n_agents;
    let num_envs = obs.len();
    let rows = num_envs * n;
    let obs_dim = model.actor(0).obs_dim();
    let mut flat = Array2::zeros((rows, obs_dim));
    for (e, agents) in obs.iter().enumerate() {
        if agents.len() != n {
            return Err(Error::shape("agents per instance", n, agents.len()));
        }
        for (i, o) in agents.iter().enumerate() {
            if o.len() != obs_dim {
                return Err(Error::shape("observation", obs_dim, o.len()));
            }
            flat.row_mut(e * n + i).iter_mut().zip(o).for_each(|(d, s)| *d = *s);
        }
    }

    let msg: Option<MessageBatch> = match &model.message {
        Some(head) => {
            counters.message_forwards += 1;
            Some(head.forward(flat.view())?)
        }
        None => None,
    };
    let logits = msg.as_ref().map_or_else(|| vec![0.0; rows], |m| m.logit.to_vec());

    let ctx_len = model.actor(0).context_len();
    let mut contexts = vec![vec![0.0; ctx_len]; rows];
    let mut senders = vec![Vec::new(); rows];
    let mut occupancy = vec![0; rows];
    let mut writes = vec![false; rows];

    if let (Some(board), Some(msg)) = (board, msg.as_ref()) {
        for r in 0..rows {
            writes[r] = protocol.force_write || gate(msg.p[r], threshold.tau);
            let out = msg.row(r);
            board.write(BlackboardEntry {
                x: out.x,
                u: out.u,
                y: out.y,
                p: out.p,
                w: writes[r],
                env: r / n,
                agent: r % n,
            })?;
            counters.board_writes += 1;
        }
        let rate = writes.iter().filter(|&&w| w).count() as f64 / rows as f64;
        threshold.update(rate);
        for r in 0..rows {
            let query: Vec<f64> = msg.x.row(r).to_vec();
            let read = board.read_topk(r / n, r % n, &query, protocol.k)?;
            counters.board_reads += 1;
            contexts[r] = read.data;
            occupancy[r] = read.occupancy;
            senders[r] = read.senders;
        }
    }

    let mut actions = vec![Vec::new(); rows];
    let mut log_probs = vec![0.0; rows];
    let mut rng = sample;
    for (a_idx, actor) in model.actors.iter().enumerate() {
        let agents: Vec<usize> = if model.actors.len() == 1 { (0..n).collect() } else { vec![a_idx] };
        let row_ids: Vec<usize> = (0..num_envs).flat_map(|e| agents.iter().map(move |&i| e * n + i)).collect();
        let sub_obs = flat.select(ndarray::Axis(0), &row_ids);
        let mut sub_ctx = Array2::zeros((row_ids.len(), ctx_len));
        for (k, &r) in row_ids.iter().enumerate() {
            sub_ctx.row_mut(k).iter_mut().zip(&contexts[r]).for_each(|(d, s)| *d = *s);
        }
        let tape: ActorTape = actor.forward(sub_obs.view(), sub_ctx.view())?;
        for (k, &r) in row_ids.iter().enumerate() {
            let out = &tape.outputs[k];
            let a = match rng.as_deref_mut() {
                Some(mut rng) => out.sample(&mut rng),
                None => out.mode(),
            };
            log_probs[r] = out.log_prob(&a);
            actions[r] = a;
        }
    }

    Ok(StepDecision {
        actions,
        log_probs,
        contexts,
        senders,
        logits,
        writes,
        occupancy,
    })
}

/// Critic values for every `(env, agent)` of a joint observation batch.
pub fn critic_values(critic: &Critic, obs: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let n = obs.first().map_or(0, |o| o.len());
    let mut inputs = Array2::zeros((obs.len() * n, critic.input_width()));
    for (e, agents) in obs.iter().enumerate() {
        let joint: Vec<&[f64]> = agents.iter().map(|o| o.as_slice()).collect();
        for i in 0..n {
            critic.fill_input(&joint, i, inputs.row_mut(e * n + i).as_slice_mut().expect("standard layout"))?;
        }
    }
    Ok(critic.forward(inputs.view())?.1.to_vec())
}

/// Rebuilds memory contexts from fresh message-head outputs and the stored
/// sender ranking. `senders` holds `k` ids per row, rows grouped by sample.
pub fn contexts_from_senders(msg: &MessageBatch, senders: &[usize], n_agents: usize, k: usize) -> Array2<f64> {
    let rows = msg.rows();
    let width = BlackboardEntry::slot_width(msg.x.ncols());
    let mut out = Array2::zeros((rows, k * width));
    for r in 0..rows {
        let base = r - r % n_agents;
        let row = out.row_mut(r).into_slice().expect("standard layout");
        for q in 0..k {
            let j = senders[r * k + q];
            if j != NO_SENDER {
                msg.psi_into(base + j, &mut row[q * width..(q + 1) * width]);
            }
        }
    }
    out
}
