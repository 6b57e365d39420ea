//! Rollout storage, indexed `(t, env, agent)` with rows laid out
//! `(t * num_envs + env) * n_agents + agent`.

use crate::error::{Error, Result};
use crate::hazard::{self, HazardLabelConfig};

/// Generalized advantage estimation over one time series.
///
/// `done[t]` zeroes the bootstrap from `t + 1`; `bootstrap` is the value of
/// the state after the last step. Returns `(advantages, return targets)`.
pub fn compute_gae(
    signal: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
    done: &[bool],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = signal.len();
    if values.len() != n {
        return Err(Error::shape("gae values", n, values.len()));
    }
    if done.len() != n {
        return Err(Error::shape("gae done flags", n, done.len()));
    }
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if done[t] { 0.0 } else { 1.0 };
        let delta = signal[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub num_envs: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_width: usize,
    pub context_len: usize,
    pub k: usize,
    len: usize,

    pub obs: Vec<f64>,
    pub contexts: Vec<f64>,
    /// Ranked senders per row, `usize::MAX` marking empty slots.
    pub senders: Vec<usize>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub values_r: Vec<f64>,
    pub values_c: Vec<f64>,
    pub logits: Vec<f64>,
    pub writes: Vec<bool>,
    /// Per `(t, env)`.
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    /// Critic values of the terminal observation for truncated steps.
    pub truncation_r: Vec<f64>,
    pub truncation_c: Vec<f64>,
    /// Critic values of the observation following the last stored step.
    pub last_values_r: Vec<f64>,
    pub last_values_c: Vec<f64>,

    pub z: Vec<bool>,
    pub h: Vec<bool>,
    pub adv_r: Vec<f64>,
    pub adv_c: Vec<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
    sealed: bool,
}

pub const NO_SENDER: usize = usize::MAX;

/// One `(env, agent)` step handed to [`RolloutBuffer::push`].
#[derive(Debug, Clone)]
pub struct Transition<'a> {
    pub obs: &'a [f64],
    pub context: &'a [f64],
    pub senders: &'a [usize],
    pub action: &'a [f64],
    pub log_prob: f64,
    pub reward: f64,
    pub cost: f64,
    pub value_r: f64,
    pub value_c: f64,
    pub logit: f64,
    pub write: bool,
    pub truncation_r: f64,
    pub truncation_c: f64,
}

impl RolloutBuffer {
    pub fn new(
        n_steps: usize,
        num_envs: usize,
        n_agents: usize,
        obs_dim: usize,
        action_width: usize,
        k: usize,
        context_len: usize,
    ) -> Self {
        let rows = n_steps * num_envs * n_agents;
        Self {
            n_steps,
            num_envs,
            n_agents,
            obs_dim,
            action_width,
            context_len,
            k,
            len: 0,
            obs: Vec::with_capacity(rows * obs_dim),
            contexts: Vec::with_capacity(rows * context_len),
            senders: Vec::with_capacity(rows * k),
            actions: Vec::with_capacity(rows * action_width),
            log_probs: Vec::with_capacity(rows),
            rewards: Vec::with_capacity(rows),
            costs: Vec::with_capacity(rows),
            values_r: Vec::with_capacity(rows),
            values_c: Vec::with_capacity(rows),
            logits: Vec::with_capacity(rows),
            writes: Vec::with_capacity(rows),
            terminated: Vec::with_capacity(n_steps * num_envs),
            truncated: Vec::with_capacity(n_steps * num_envs),
            truncation_r: Vec::with_capacity(rows),
            truncation_c: Vec::with_capacity(rows),
            last_values_r: Vec::new(),
            last_values_c: Vec::new(),
            z: Vec::new(),
            h: Vec::new(),
            adv_r: Vec::new(),
            adv_c: Vec::new(),
            ret_r: Vec::new(),
            ret_c: Vec::new(),
            sealed: false,
        }
    }

    pub fn rows(&self) -> usize {
        self.log_probs.len()
    }

    /// Complete timesteps stored so far.
    pub fn steps(&self) -> usize {
        self.len
    }

    pub fn is_full(&self) -> bool {
        self.len == self.n_steps
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn row(&self, t: usize, env: usize, agent: usize) -> usize {
        (t * self.num_envs + env) * self.n_agents + agent
    }

    /// Number of `(t, env)` samples.
    pub fn samples(&self) -> usize {
        self.len * self.num_envs
    }

    pub fn push(&mut self, tr: Transition<'_>) -> Result<()> {
        if self.sealed {
            return Err(Error::config("buffer", "push into a sealed buffer"));
        }
        if tr.obs.len() != self.obs_dim {
            return Err(Error::shape("buffer observation", self.obs_dim, tr.obs.len()));
        }
        if tr.context.len() != self.context_len {
            return Err(Error::shape("buffer context", self.context_len, tr.context.len()));
        }
        if tr.action.len() != self.action_width {
            return Err(Error::shape("buffer action", self.action_width, tr.action.len()));
        }
        self.obs.extend_from_slice(tr.obs);
        self.contexts.extend_from_slice(tr.context);
        self.senders.extend((0..self.k).map(|s| tr.senders.get(s).copied().unwrap_or(NO_SENDER)));
        self.actions.extend_from_slice(tr.action);
        self.log_probs.push(tr.log_prob);
        self.rewards.push(tr.reward);
        self.costs.push(tr.cost);
        self.values_r.push(tr.value_r);
        self.values_c.push(tr.value_c);
        self.logits.push(tr.logit);
        self.writes.push(tr.write);
        self.truncation_r.push(tr.truncation_r);
        self.truncation_c.push(tr.truncation_c);
        Ok(())
    }

    /// Records the per-instance episode flags that close timestep `t`.
    pub fn end_step(&mut self, terminated: &[bool], truncated: &[bool]) -> Result<()> {
        let expected = (self.len + 1) * self.num_envs * self.n_agents;
        if self.rows() != expected {
            return Err(Error::shape("buffer rows at end of step", expected, self.rows()));
        }
        self.terminated.extend_from_slice(terminated);
        self.truncated.extend_from_slice(truncated);
        self.len += 1;
        Ok(())
    }

    pub fn done(&self, t: usize, env: usize) -> bool {
        let i = t * self.num_envs + env;
        self.terminated[i] || self.truncated[i]
    }

    /// Seals the buffer, builds hazard labels (when `labels` is given) and
    /// reward/cost advantages with their return targets.
    pub fn finalize(
        &mut self,
        last_values_r: Vec<f64>,
        last_values_c: Vec<f64>,
        gamma: f64,
        gae_lambda: f64,
        labels: Option<&HazardLabelConfig>,
    ) -> Result<()> {
        let series = self.num_envs * self.n_agents;
        if last_values_r.len() != series || last_values_c.len() != series {
            return Err(Error::shape("bootstrap values", series, last_values_r.len()));
        }
        self.sealed = true;
        self.last_values_r = last_values_r;
        self.last_values_c = last_values_c;
        let rows = self.rows();
        self.adv_r = vec![0.0; rows];
        self.adv_c = vec![0.0; rows];
        self.ret_r = vec![0.0; rows];
        self.ret_c = vec![0.0; rows];
        if labels.is_some() {
            self.z = vec![false; rows];
            self.h = vec![false; rows];
        } else {
            self.z.clear();
            self.h.clear();
        }

        let t_len = self.len;
        for e in 0..self.num_envs {
            let done: Vec<bool> = (0..t_len).map(|t| self.done(t, e)).collect();
            for i in 0..self.n_agents {
                let idx: Vec<usize> = (0..t_len).map(|t| self.row(t, e, i)).collect();
                let trunc = |t: usize| self.truncated[t * self.num_envs + e] && !self.terminated[t * self.num_envs + e];
                let gather = |src: &[f64]| idx.iter().map(|&r| src[r]).collect::<Vec<_>>();
                // Time-limit truncation folds the discounted terminal value
                // into the signal so the done flag can cut the recursion.
                let fold = |sig: &[f64], tv: &[f64]| {
                    idx.iter()
                        .enumerate()
                        .map(|(t, &r)| sig[r] + if trunc(t) { gamma * tv[r] } else { 0.0 })
                        .collect::<Vec<_>>()
                };
                let sig_r = fold(&self.rewards, &self.truncation_r);
                let sig_c = fold(&self.costs, &self.truncation_c);
                let series_idx = e * self.n_agents + i;
                let (ar, rr) = compute_gae(&sig_r, &gather(&self.values_r), self.last_values_r[series_idx], gamma, gae_lambda, &done)?;
                let (ac, rc) = compute_gae(&sig_c, &gather(&self.values_c), self.last_values_c[series_idx], gamma, gae_lambda, &done)?;
                for (t, &r) in idx.iter().enumerate() {
                    self.adv_r[r] = ar[t];
                    self.adv_c[r] = ac[t];
                    self.ret_r[r] = rr[t];
                    self.ret_c[r] = rc[t];
                }
                if let Some(cfg) = labels {
                    // The rollout edge cuts windows like an episode end.
                    let mut ends = done.clone();
                    if let Some(last) = ends.last_mut() {
                        *last = true;
                    }
                    let l = hazard::label(&gather(&self.costs), &ends, cfg)?;
                    for (t, &r) in idx.iter().enumerate() {
                        self.z[r] = l.z[t];
                        self.h[r] = l.h[t];
                    }
                }
            }
        }
        Ok(())
    }

    /// Recomputes lookahead labels for a different horizon without touching
    /// the stored ones; returns `h` in row order.
    pub fn relabel(&self, cfg: &HazardLabelConfig) -> Result<Vec<bool>> {
        let mut h = vec![false; self.rows()];
        for e in 0..self.num_envs {
            let mut ends: Vec<bool> = (0..self.len).map(|t| self.done(t, e)).collect();
            if let Some(last) = ends.last_mut() {
                *last = true;
            }
            for i in 0..self.n_agents {
                let idx: Vec<usize> = (0..self.len).map(|t| self.row(t, e, i)).collect();
                let costs: Vec<f64> = idx.iter().map(|&r| self.costs[r]).collect();
                let l = hazard::label(&costs, &ends, cfg)?;
                for (t, &r) in idx.iter().enumerate() {
                    h[r] = l.h[t];
                }
            }
        }
        Ok(h)
    }

    pub fn obs_row(&self, r: usize) -> &[f64] {
        &self.obs[r * self.obs_dim..(r + 1) * self.obs_dim]
    }

    pub fn context_row(&self, r: usize) -> &[f64] {
        &self.contexts[r * self.context_len..(r + 1) * self.context_len]
    }

    pub fn action_row(&self, r: usize) -> &[f64] {
        &self.actions[r * self.action_width..(r + 1) * self.action_width]
    }

    pub fn sender_row(&self, r: usize) -> &[usize] {
        &self.senders[r * self.k..(r + 1) * self.k]
    }
}
