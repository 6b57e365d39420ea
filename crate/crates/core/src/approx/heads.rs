use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpLayout, MlpTape};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn hidden_sizes(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(hidden, layers));
    sizes.push(output);
    sizes
}

fn check_finite(what: &str, v: impl IntoIterator<Item = f64>) -> Result<()> {
    if v.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Named slice of a module's flat parameter vector, for checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn describe_mlp(prefix: &str, sizes: &[usize], mut offset: usize, out: &mut Vec<TensorInfo>) -> usize {
    for (i, w) in sizes.windows(2).enumerate() {
        out.push(TensorInfo {
            name: format!("{prefix}.{i}.weight"),
            shape: vec![w[1], w[0]],
            offset,
        });
        offset += w[0] * w[1];
        out.push(TensorInfo {
            name: format!("{prefix}.{i}.bias"),
            shape: vec![w[1]],
            offset,
        });
        offset += w[1];
    }
    offset
}

/// Hazard logit, yield, intent and state summary for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageHeadOutput {
    pub logit: f64,
    pub p: f64,
    pub u: Vec<f64>,
    pub y: f64,
    pub x: Vec<f64>,
}

/// Batched message-head outputs, one row per observation.
#[derive(Debug, Clone)]
pub struct MessageBatch {
    pub logit: Array1<f64>,
    pub p: Array1<f64>,
    pub y: Array1<f64>,
    pub u: Array2<f64>,
    pub x: Array2<f64>,
    tape: MlpTape,
}

impl MessageBatch {
    pub fn rows(&self) -> usize {
        self.logit.len()
    }

    pub fn row(&self, r: usize) -> MessageHeadOutput {
        MessageHeadOutput {
            logit: self.logit[r],
            p: self.p[r],
            u: self.u.row(r).to_vec(),
            y: self.y[r],
            x: self.x.row(r).to_vec(),
        }
    }

    /// Writes `[x; u; y; p]` of row `r` into `out`.
    pub fn psi_into(&self, r: usize, out: &mut [f64]) {
        let d = self.x.ncols();
        out[..d].copy_from_slice(self.x.row(r).as_slice().unwrap());
        out[d..2 * d].copy_from_slice(self.u.row(r).as_slice().unwrap());
        out[2 * d] = self.y[r];
        out[2 * d + 1] = self.p[r];
    }
}

/// Upstream gradients for every message-head output.
#[derive(Debug, Clone)]
pub struct MessageGrad {
    pub logit: Array1<f64>,
    pub p: Array1<f64>,
    pub y: Array1<f64>,
    pub u: Array2<f64>,
    pub x: Array2<f64>,
}

impl MessageGrad {
    pub fn zeros(rows: usize, d_msg: usize) -> Self {
        Self {
            logit: Array1::zeros(rows),
            p: Array1::zeros(rows),
            y: Array1::zeros(rows),
            u: Array2::zeros((rows, d_msg)),
            x: Array2::zeros((rows, d_msg)),
        }
    }

    /// Adds a gradient with respect to `[x; u; y; p]` of row `r`.
    pub fn add_psi(&mut self, r: usize, g: &[f64]) {
        let d = self.x.ncols();
        for j in 0..d {
            self.x[[r, j]] += g[j];
            self.u[[r, j]] += g[d + j];
        }
        self.y[r] += g[2 * d];
        self.p[r] += g[2 * d + 1];
    }
}

/// Message head: a tanh trunk with a linear output split into the hazard
/// logit, the yield logit, the intent (tanh-squashed) and the state summary
/// (linear).
///
/// Output layout of the trunk: `[logit, yield_logit, u (d_msg), x (d_msg)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageHead {
    pub trunk: MlpLayout,
    sizes: Vec<usize>,
    pub d_msg: usize,
    pub params: Vec<f64>,
}

impl MessageHead {
    pub fn new(obs_dim: usize, hidden: usize, layers: usize, d_msg: usize) -> Self {
        let sizes = hidden_sizes(obs_dim, hidden, layers, 2 + 2 * d_msg);
        let trunk = MlpLayout::new(&sizes, Activation::Identity, 0);
        let params = vec![0.0; trunk.num_params()];
        Self {
            trunk,
            sizes,
            d_msg,
            params,
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.trunk.init(&mut self.params, rng, 1.0);
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_width()
    }

    pub fn describe(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        describe_mlp("message", &self.sizes, 0, &mut out);
        out
    }

    pub fn forward(&self, obs: ArrayView2<f64>) -> Result<MessageBatch> {
        check_finite("message head input", obs.iter().copied())?;
        let tape = self.trunk.forward(&self.params, obs)?;
        let out = tape.output();
        let d = self.d_msg;
        let logit = out.column(0).to_owned();
        let p = logit.mapv(sigmoid);
        let y = out.column(1).mapv(sigmoid);
        let u = out.slice(s![.., 2..2 + d]).mapv(f64::tanh);
        let x = out.slice(s![.., 2 + d..2 + 2 * d]).to_owned();
        Ok(MessageBatch {
            logit,
            p,
            y,
            u,
            x,
            tape,
        })
    }

    pub fn forward_one(&self, obs: &[f64]) -> Result<MessageHeadOutput> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).map_err(|_| Error::shape("message head input", self.obs_dim(), obs.len()))?;
        Ok(self.forward(view)?.row(0))
    }

    pub fn backward(&self, batch: &MessageBatch, g: &MessageGrad, grad: &mut [f64]) {
        let d = self.d_msg;
        let rows = batch.rows();
        let mut d_out = Array2::zeros((rows, 2 + 2 * d));
        for r in 0..rows {
            let p = batch.p[r];
            d_out[[r, 0]] = g.logit[r] + g.p[r] * p * (1.0 - p);
            let y = batch.y[r];
            d_out[[r, 1]] = g.y[r] * y * (1.0 - y);
            for j in 0..d {
                let u = batch.u[[r, j]];
                d_out[[r, 2 + j]] = g.u[[r, j]] * (1.0 - u * u);
                d_out[[r, 2 + d + j]] = g.x[[r, j]];
            }
        }
        self.trunk.backward(&self.params, &batch.tape, d_out.view(), grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Gaussian { act_dim: usize },
    Categorical { n_actions: usize },
}

impl PolicyKind {
    pub fn head_width(&self) -> usize {
        match *self {
            PolicyKind::Gaussian { act_dim } => act_dim,
            PolicyKind::Categorical { n_actions } => n_actions,
        }
    }

    /// Width of a stored action: the pre-squash sample, or one index.
    pub fn action_width(&self) -> usize {
        match *self {
            PolicyKind::Gaussian { act_dim } => act_dim,
            PolicyKind::Categorical { .. } => 1,
        }
    }
}

/// Action distribution for one agent at one step.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    Categorical { logits: Vec<f64> },
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl PolicyOutput {
    /// Continuous actions are returned before squashing; discrete actions as
    /// a single index.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            PolicyOutput::Gaussian { mean, log_std } => mean
                .iter()
                .zip(log_std)
                .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            PolicyOutput::Categorical { logits } => {
                let logp = log_softmax(logits);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        return vec![k as f64];
                    }
                }
                vec![(logits.len() - 1) as f64]
            }
        }
    }

    /// Deterministic action: the Gaussian mean or the arg-max logit.
    pub fn mode(&self) -> Vec<f64> {
        match self {
            PolicyOutput::Gaussian { mean, .. } => mean.clone(),
            PolicyOutput::Categorical { logits } => {
                let best = logits
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
                vec![best.0 as f64]
            }
        }
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        match self {
            PolicyOutput::Gaussian { mean, log_std } => mean
                .iter()
                .zip(log_std)
                .zip(action)
                .map(|((m, ls), a)| {
                    let z = (a - m) / ls.exp();
                    -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
                })
                .sum(),
            PolicyOutput::Categorical { logits } => log_softmax(logits)[action[0] as usize],
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            PolicyOutput::Gaussian { log_std, .. } => {
                log_std.iter().sum::<f64>() + 0.5 * log_std.len() as f64 * (2.0 * PI * std::f64::consts::E).ln()
            }
            PolicyOutput::Categorical { logits } => {
                let logp = log_softmax(logits);
                -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>()
            }
        }
    }

    /// Gradient of `log_prob(action)` with respect to the head output (mean
    /// or logits) and the effective log-std.
    pub fn log_prob_grad(&self, action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self {
            PolicyOutput::Gaussian { mean, log_std } => {
                let mut d_mean = Vec::with_capacity(mean.len());
                let mut d_ls = Vec::with_capacity(mean.len());
                for ((m, ls), a) in mean.iter().zip(log_std).zip(action) {
                    let var = (2.0 * ls).exp();
                    d_mean.push((a - m) / var);
                    d_ls.push((a - m) * (a - m) / var - 1.0);
                }
                (d_mean, d_ls)
            }
            PolicyOutput::Categorical { logits } => {
                let k = action[0] as usize;
                let g = log_softmax(logits)
                    .iter()
                    .enumerate()
                    .map(|(j, lp)| if j == k { 1.0 } else { 0.0 } - lp.exp())
                    .collect();
                (g, Vec::new())
            }
        }
    }

    pub fn entropy_grad(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            PolicyOutput::Gaussian { mean, log_std } => (vec![0.0; mean.len()], vec![1.0; log_std.len()]),
            PolicyOutput::Categorical { logits } => {
                let logp = log_softmax(logits);
                let h = -logp.iter().map(|lp| lp.exp() * lp).sum::<f64>();
                (logp.iter().map(|lp| -lp.exp() * (lp + h)).collect(), Vec::new())
            }
        }
    }
}

/// Forward-pass record for a batch of actor evaluations.
#[derive(Debug, Clone)]
pub struct ActorTape {
    pub encoder: MlpTape,
    pub policy: MlpTape,
    pub outputs: Vec<PolicyOutput>,
}

impl ActorTape {
    pub fn embedding(&self) -> &Array2<f64> {
        self.encoder.output()
    }
}

/// Memory-conditioned actor: a one-layer tanh context encoder whose output
/// is concatenated with the observation and fed to a tanh policy MLP.
///
/// Parameter order: encoder, policy, then the state-independent log-std for
/// Gaussian policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub kind: PolicyKind,
    pub encoder: MlpLayout,
    pub policy: MlpLayout,
    enc_sizes: Vec<usize>,
    pol_sizes: Vec<usize>,
    obs_dim: usize,
    log_std_offset: usize,
    pub params: Vec<f64>,
}

impl Actor {
    pub fn new(obs_dim: usize, context_len: usize, embed_dim: usize, hidden: usize, layers: usize, kind: PolicyKind) -> Self {
        let enc_sizes = vec![context_len, embed_dim];
        let encoder = MlpLayout::new(&enc_sizes, Activation::Tanh, 0);
        let pol_sizes = hidden_sizes(obs_dim + embed_dim, hidden, layers, kind.head_width());
        let policy = MlpLayout::new(&pol_sizes, Activation::Identity, encoder.num_params());
        let log_std_offset = policy.range().end;
        let n_log_std = match kind {
            PolicyKind::Gaussian { act_dim } => act_dim,
            PolicyKind::Categorical { .. } => 0,
        };
        Self {
            kind,
            encoder,
            policy,
            enc_sizes,
            pol_sizes,
            obs_dim,
            log_std_offset,
            params: vec![0.0; log_std_offset + n_log_std],
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng, log_std_init: f64) {
        self.encoder.init(&mut self.params, rng, 1.0);
        self.policy.init(&mut self.params, rng, 0.01);
        let off = self.log_std_offset;
        self.params[off..].iter_mut().for_each(|v| *v = log_std_init);
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn context_len(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_width()
    }

    pub fn describe(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let off = describe_mlp("encoder", &self.enc_sizes, 0, &mut out);
        let off = describe_mlp("policy", &self.pol_sizes, off, &mut out);
        if let PolicyKind::Gaussian { act_dim } = self.kind {
            out.push(TensorInfo {
                name: "log_std".into(),
                shape: vec![act_dim],
                offset: off,
            });
        }
        out
    }

    pub fn log_std_range(&self) -> std::ops::Range<usize> {
        self.log_std_offset..self.params.len()
    }

    fn effective_log_std(&self) -> Vec<f64> {
        self.params[self.log_std_range()]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    pub fn encode(&self, contexts: ArrayView2<f64>) -> Result<MlpTape> {
        check_finite("actor parameters", self.params.iter().copied())?;
        self.encoder.forward(&self.params, contexts)
    }

    pub fn forward(&self, obs: ArrayView2<f64>, contexts: ArrayView2<f64>) -> Result<ActorTape> {
        if obs.ncols() != self.obs_dim {
            return Err(Error::shape("actor observation", self.obs_dim, obs.ncols()));
        }
        if obs.nrows() != contexts.nrows() {
            return Err(Error::shape("actor context rows", obs.nrows(), contexts.nrows()));
        }
        let encoder = self.encode(contexts)?;
        let mut input = Array2::zeros((obs.nrows(), self.obs_dim + self.embed_dim()));
        input.slice_mut(s![.., ..self.obs_dim]).assign(&obs);
        input.slice_mut(s![.., self.obs_dim..]).assign(encoder.output());
        let policy = self.policy.forward(&self.params, input.view())?;
        let log_std = self.effective_log_std();
        let outputs = policy
            .output()
            .rows()
            .into_iter()
            .map(|row| match self.kind {
                PolicyKind::Gaussian { .. } => PolicyOutput::Gaussian {
                    mean: row.to_vec(),
                    log_std: log_std.clone(),
                },
                PolicyKind::Categorical { .. } => PolicyOutput::Categorical { logits: row.to_vec() },
            })
            .collect::<Vec<_>>();
        check_finite("policy output", outputs.iter().flat_map(|o| match o {
            PolicyOutput::Gaussian { mean, .. } => mean.clone(),
            PolicyOutput::Categorical { logits } => logits.clone(),
        }))?;
        Ok(ActorTape {
            encoder,
            policy,
            outputs,
        })
    }

    /// Backpropagates head-output gradients `d_head` and effective log-std
    /// gradients `d_log_std` (summed over the batch). Returns the gradient
    /// with respect to the context rows.
    pub fn backward(&self, tape: &ActorTape, d_head: ArrayView2<f64>, d_log_std: &[f64], grad: &mut [f64]) -> Array2<f64> {
        let d_input = self.policy.backward(&self.params, &tape.policy, d_head, grad);
        let d_emb = d_input.slice(s![.., self.obs_dim..]).to_owned();
        let d_ctx = self.encoder.backward(&self.params, &tape.encoder, d_emb.view(), grad);
        let range = self.log_std_range();
        for ((g, &d), &raw) in grad[range.clone()].iter_mut().zip(d_log_std).zip(&self.params[range]) {
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                *g += d;
            }
        }
        d_ctx
    }
}

/// Centralized critic: input is every agent's observation concatenated,
/// followed by a one-hot id of the agent whose value is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: MlpLayout,
    sizes: Vec<usize>,
    n_agents: usize,
    obs_dim: usize,
    pub params: Vec<f64>,
}

impl Critic {
    pub fn new(n_agents: usize, obs_dim: usize, hidden: usize, layers: usize) -> Self {
        let sizes = hidden_sizes(n_agents * obs_dim + n_agents, hidden, layers, 1);
        let net = MlpLayout::new(&sizes, Activation::Identity, 0);
        Self {
            params: vec![0.0; net.num_params()],
            net,
            sizes,
            n_agents,
            obs_dim,
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.net.init(&mut self.params, rng, 1.0);
    }

    pub fn input_width(&self) -> usize {
        self.net.input_width()
    }

    pub fn describe(&self, name: &str) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        describe_mlp(name, &self.sizes, 0, &mut out);
        out
    }

    /// Writes the centralized input for `agent` into `row`.
    pub fn fill_input(&self, joint_obs: &[&[f64]], agent: usize, row: &mut [f64]) -> Result<()> {
        if joint_obs.len() != self.n_agents {
            return Err(Error::shape("critic joint observation", self.n_agents, joint_obs.len()));
        }
        for (i, o) in joint_obs.iter().enumerate() {
            if o.len() != self.obs_dim {
                return Err(Error::shape("critic observation", self.obs_dim, o.len()));
            }
            row[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(o);
        }
        let ids = &mut row[self.n_agents * self.obs_dim..];
        ids.iter_mut().for_each(|v| *v = 0.0);
        ids[agent] = 1.0;
        Ok(())
    }

    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<(MlpTape, Array1<f64>)> {
        let tape = self.net.forward(&self.params, inputs)?;
        let values = tape.output().column(0).to_owned();
        check_finite("critic output", values.iter().copied())?;
        Ok((tape, values))
    }

    pub fn backward(&self, tape: &MlpTape, d_values: &Array1<f64>, grad: &mut [f64]) {
        let d = d_values.view().insert_axis(ndarray::Axis(1));
        self.net.backward(&self.params, tape, d, grad);
    }
}

/// Weighted binary cross-entropy for one logit, evaluated in logit space.
pub fn wbce(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * softplus(-logit)
    } else {
        softplus(logit)
    }
}

pub fn wbce_grad(logit: f64, label: bool, pos_weight: f64) -> f64 {
    if label {
        pos_weight * (sigmoid(logit) - 1.0)
    } else {
        sigmoid(logit)
    }
}

/// Positive-class weight `clip((1 - q) / q, 1, 20)` for positive rate `q`,
/// floored at one positive per batch.
pub fn positive_weight(labels: impl ExactSizeIterator<Item = bool>) -> f64 {
    let n = labels.len().max(1) as f64;
    let pos = labels.filter(|&b| b).count() as f64;
    let q = (pos / n).max(1.0 / n);
    ((1.0 - q) / q).clamp(1.0, 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::f64::consts::LN_2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_message_head() {
        let head = MessageHead::new(4, 8, 2, 3);
        let out = head.forward_one(&[0.0; 4]).unwrap();
        assert_eq!(out.logit, 0.0);
        assert_eq!(out.p, 0.5);
        assert_eq!(out.y, 0.5);
        assert_eq!(out.u, vec![0.0; 3]);
        assert_eq!(out.x, vec![0.0; 3]);
    }

    #[test]
    fn message_head_rejects_non_finite_input() {
        let head = MessageHead::new(2, 4, 1, 2);
        assert!(matches!(head.forward_one(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn hazard_probability_stays_open_interval() {
        let mut head = MessageHead::new(3, 8, 2, 2);
        head.init(&mut ChaCha8Rng::seed_from_u64(0));
        for v in [-1e3, -1.0, 0.0, 1.0, 1e3] {
            let out = head.forward_one(&[v, -v, v]).unwrap();
            assert!(out.p >= 0.0 && out.p <= 1.0 && out.p == sigmoid(out.logit));
        }
        let out = head.forward_one(&[0.3, 0.1, -0.2]).unwrap();
        assert!(out.p > 0.0 && out.p < 1.0);
    }

    #[test]
    fn logit_gradient_matches_finite_difference() {
        let mut head = MessageHead::new(3, 8, 2, 2);
        head.init(&mut ChaCha8Rng::seed_from_u64(5));
        let obs = [0.4, -0.7, 0.2];
        let batch = head.forward(ArrayView2::from_shape((1, 3), &obs).unwrap()).unwrap();
        let mut g = MessageGrad::zeros(1, 2);
        g.logit[0] = 1.0;
        let mut grad = vec![0.0; head.params.len()];
        head.backward(&batch, &g, &mut grad);
        let h = 1e-5;
        for i in (0..head.params.len()).step_by(7) {
            let mut up = head.clone();
            up.params[i] += h;
            let mut down = head.clone();
            down.params[i] -= h;
            let fd = (up.forward_one(&obs).unwrap().logit - down.forward_one(&obs).unwrap().logit) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_context_zero_bias_encoder_gives_zero_embedding() {
        let mut actor = Actor::new(3, 8, 4, 8, 2, PolicyKind::Gaussian { act_dim: 2 });
        actor.init(&mut ChaCha8Rng::seed_from_u64(1), 0.5f64.ln());
        let tape = actor.encode(Array2::zeros((2, 8)).view()).unwrap();
        assert!(tape.output().iter().all(|&v| v == 0.0));
        let ctx = Array2::from_elem((1, 8), 0.3);
        let a = actor.encode(ctx.view()).unwrap();
        let b = actor.encode(ctx.view()).unwrap();
        assert_eq!(a.output(), b.output());
        assert!(actor.encode(Array2::zeros((1, 7)).view()).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        let uniform = PolicyOutput::Categorical { logits: vec![0.3; 9] };
        assert!((uniform.entropy() - 9f64.ln()).abs() < 1e-12);
        assert!((uniform.entropy() - 2.1972).abs() < 1e-4);
        let gauss = PolicyOutput::Gaussian {
            mean: vec![0.0, 0.0],
            log_std: vec![0.0, 0.0],
        };
        assert!((gauss.entropy() - (2.0 * PI * std::f64::consts::E).ln()).abs() < 1e-12);
        assert!((gauss.entropy() - 2.8379).abs() < 1e-4);
    }

    #[test]
    fn gaussian_mode_density() {
        let sigma = [0.5f64, 2.0];
        let out = PolicyOutput::Gaussian {
            mean: vec![0.3, -1.0],
            log_std: sigma.iter().map(|s| s.ln()).collect(),
        };
        let density: f64 = sigma.iter().map(|s| 1.0 / (s * (2.0 * PI).sqrt())).product();
        assert!((out.log_prob(&out.mode()) - density.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_log_probs_are_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let outs = [
            PolicyOutput::Gaussian {
                mean: vec![0.1, 0.2],
                log_std: vec![-5.0, 1.0],
            },
            PolicyOutput::Categorical {
                logits: vec![-30.0, 0.0, 30.0],
            },
        ];
        for out in outs {
            for _ in 0..100 {
                let a = out.sample(&mut rng);
                assert!(out.log_prob(&a).is_finite());
            }
            if let PolicyOutput::Categorical { .. } = out {
                assert!(out.entropy() >= 0.0);
            }
        }
    }

    #[test]
    fn distribution_gradients_match_finite_differences() {
        let h = 1e-6;
        let logits = vec![0.2, -0.4, 1.1];
        let cat = PolicyOutput::Categorical { logits: logits.clone() };
        let (g, _) = cat.log_prob_grad(&[1.0]);
        let (ge, _) = cat.entropy_grad();
        for j in 0..3 {
            let mut up = logits.clone();
            up[j] += h;
            let mut down = logits.clone();
            down[j] -= h;
            let (u, d) = (PolicyOutput::Categorical { logits: up }, PolicyOutput::Categorical { logits: down });
            assert!(((u.log_prob(&[1.0]) - d.log_prob(&[1.0])) / (2.0 * h) - g[j]).abs() < 1e-8);
            assert!(((u.entropy() - d.entropy()) / (2.0 * h) - ge[j]).abs() < 1e-8);
        }
        let (mean, ls, a) = (vec![0.1, -0.3], vec![-0.2, 0.4], [0.5, 0.0]);
        let gauss = |mean: Vec<f64>, log_std: Vec<f64>| PolicyOutput::Gaussian { mean, log_std };
        let (gm, gl) = gauss(mean.clone(), ls.clone()).log_prob_grad(&a);
        for j in 0..2 {
            let mut up = mean.clone();
            up[j] += h;
            let mut down = mean.clone();
            down[j] -= h;
            let fd = (gauss(up, ls.clone()).log_prob(&a) - gauss(down, ls.clone()).log_prob(&a)) / (2.0 * h);
            assert!((fd - gm[j]).abs() < 1e-8);
            let mut up = ls.clone();
            up[j] += h;
            let mut down = ls.clone();
            down[j] -= h;
            let fd = (gauss(mean.clone(), up).log_prob(&a) - gauss(mean.clone(), down).log_prob(&a)) / (2.0 * h);
            assert!((fd - gl[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn critics_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut vr = Critic::new(2, 3, 8, 2);
        let mut vc = Critic::new(2, 3, 8, 2);
        let zero = vr.forward(Array2::zeros((1, vr.input_width())).view()).unwrap().1;
        assert_eq!(zero[0], 0.0);
        vr.init(&mut rng);
        vc.init(&mut rng);
        let x = array![[0.1, 0.2, 0.3, -0.1, -0.2, -0.3, 1.0, 0.0]];
        let before = vc.forward(x.view()).unwrap().1;
        vr.params.iter_mut().for_each(|p| *p += 0.1);
        assert_eq!(vc.forward(x.view()).unwrap().1, before);
        assert!(vr.forward(Array2::zeros((1, 7)).view()).is_err());
    }

    #[test]
    fn critic_input_layout() {
        let c = Critic::new(2, 2, 4, 1);
        let mut row = vec![9.0; c.input_width()];
        c.fill_input(&[&[1.0, 2.0], &[3.0, 4.0]], 1, &mut row).unwrap();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 4.0, 0.0, 1.0]);
        assert!(c.fill_input(&[&[1.0, 2.0]], 0, &mut row).is_err());
    }

    #[test]
    fn wbce_values() {
        assert!((wbce(0.0, true, 1.0) - LN_2).abs() < 1e-12);
        assert!(wbce(20.0, true, 1.0) < 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let l: f64 = rng.random_range(-8.0..8.0);
            let y: bool = rng.random();
            let p = 1.0 / (1.0 + (-l).exp());
            let plain = if y { -p.ln() } else { -(1.0 - p).ln() };
            assert!((wbce(l, y, 1.0) - plain).abs() < 1e-9);
            let fd = (wbce(l + 1e-6, y, 3.0) - wbce(l - 1e-6, y, 3.0)) / 2e-6;
            assert!((fd - wbce_grad(l, y, 3.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn positive_weight_rule() {
        assert_eq!(positive_weight([true, false].into_iter()), 1.0);
        assert_eq!(positive_weight([false; 100].into_iter()), 20.0);
        let mut v = vec![false; 10];
        v[0] = true;
        assert_eq!(positive_weight(v.into_iter()), 9.0);
    }
}
