use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::approx::{positive_weight, wbce as wbce_one, wbce_grad, MessageGrad, PolicyKind};
use crate::error::{Error, Result};

use super::buffer::RolloutBuffer;
use super::model::{contexts_from_senders, Counters, Model, ModelGrads};

/// `A^R - lambda * A^C`, elementwise.
pub fn hybrid_advantage(adv_r: &[f64], adv_c: &[f64], lambda: f64) -> Vec<f64> {
    adv_r.iter().zip(adv_c).map(|(r, c)| r - lambda * c).collect()
}

/// Standardizes to zero mean and unit variance, with the standard deviation
/// floored at `1e-8`.
pub fn normalize(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

/// Clipped surrogate loss `-mean(min(rho * A, clip(rho) * A))`.
pub fn clip_surrogate(new_log_probs: &[f64], old_log_probs: &[f64], adv: &[f64], clip_eps: f64) -> f64 {
    let n = adv.len().max(1) as f64;
    -new_log_probs
        .iter()
        .zip(old_log_probs)
        .zip(adv)
        .map(|((new, old), a)| surrogate_term(new - old, *a, clip_eps).0)
        .sum::<f64>()
        / n
}

/// Returns `min(rho A, clip(rho) A)` and its derivative in the log-ratio.
fn surrogate_term(log_ratio: f64, adv: f64, clip_eps: f64) -> (f64, f64) {
    let ratio = log_ratio.exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Batch-mean weighted binary cross-entropy on logits.
pub fn wbce(logits: &[f64], labels: &[bool], pos_weight: f64) -> f64 {
    let n = logits.len().max(1) as f64;
    logits.iter().zip(labels).map(|(&l, &h)| wbce_one(l, h, pos_weight)).sum::<f64>() / n
}

/// Loss coefficients and switches of the actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub clip_eps: f64,
    pub write: f64,
    pub hazard: f64,
    pub entropy: f64,
    /// Rebuild contexts from fresh message-head outputs instead of using the
    /// stored ones.
    pub fresh_contexts: bool,
}

/// Scalar loss components of one minibatch. Actor terms are means over
/// agents of per-agent batch means.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clip: f64,
    pub write_term: f64,
    pub write_coef: f64,
    pub wbce: f64,
    pub hazard_coef: f64,
    pub entropy: f64,
    pub entropy_coef: f64,
    pub critic_r: f64,
    pub critic_c: f64,
    pub approx_kl: f64,
}

impl LossBreakdown {
    pub fn actor_total(&self) -> f64 {
        self.clip + self.write_coef * self.write_term + self.hazard_coef * self.wbce - self.entropy_coef * self.entropy
    }

    pub fn is_finite(&self) -> bool {
        [self.clip, self.write_term, self.wbce, self.entropy, self.critic_r, self.critic_c, self.approx_kl]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Training rows grouped by sample: row `s * n_agents + i` is agent `i` of
/// sample `s`, a sample being one `(t, env)` pair.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub n_agents: usize,
    pub obs: Array2<f64>,
    pub contexts: Array2<f64>,
    /// `k` sender ids per row, `NO_SENDER` for empty slots.
    pub senders: Vec<usize>,
    pub k: usize,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub labels: Vec<bool>,
    pub writes: Vec<bool>,
    pub critic_inputs: Array2<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
}

impl Minibatch {
    pub fn rows(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn samples(&self) -> usize {
        self.rows() / self.n_agents
    }

    /// Gathers samples (indices into `t * num_envs + env`) from a sealed
    /// buffer. `advantages` is aligned with buffer rows.
    pub fn gather(buffer: &RolloutBuffer, model: &Model, samples: &[usize], advantages: &[f64]) -> Result<Self> {
        if !buffer.is_sealed() {
            return Err(Error::config("buffer", "minibatch gathered before the buffer was sealed"));
        }
        let n = buffer.n_agents;
        let rows = samples.len() * n;
        let row_ids: Vec<usize> = samples.iter().flat_map(|&s| (0..n).map(move |i| s * n + i)).collect();
        let critic = &model.critic_r;
        let mut critic_inputs = Array2::zeros((rows, critic.input_width()));
        for (si, &s) in samples.iter().enumerate() {
            let joint: Vec<&[f64]> = (0..n).map(|i| buffer.obs_row(s * n + i)).collect();
            for i in 0..n {
                critic.fill_input(&joint, i, critic_inputs.row_mut(si * n + i).as_slice_mut().expect("standard layout"))?;
            }
        }
        let block = |src: &[f64], width: usize| {
            let mut out = Array2::zeros((rows, width));
            for (k, &r) in row_ids.iter().enumerate() {
                out.row_mut(k).as_slice_mut().expect("standard layout").copy_from_slice(&src[r * width..(r + 1) * width]);
            }
            out
        };
        Ok(Self {
            n_agents: n,
            obs: block(&buffer.obs, buffer.obs_dim),
            contexts: block(&buffer.contexts, buffer.context_len),
            senders: row_ids.iter().flat_map(|&r| buffer.sender_row(r).iter().copied()).collect(),
            k: buffer.k,
            actions: block(&buffer.actions, buffer.action_width),
            old_log_probs: row_ids.iter().map(|&r| buffer.log_probs[r]).collect(),
            advantages: row_ids.iter().map(|&r| advantages[r]).collect(),
            labels: if buffer.h.is_empty() { Vec::new() } else { row_ids.iter().map(|&r| buffer.h[r]).collect() },
            writes: row_ids.iter().map(|&r| buffer.writes[r]).collect(),
            critic_inputs,
            ret_r: row_ids.iter().map(|&r| buffer.ret_r[r]).collect(),
            ret_c: row_ids.iter().map(|&r| buffer.ret_c[r]).collect(),
        })
    }
}

/// Actor objective (clip surrogate, write penalty, hazard WBCE, entropy)
/// on a minibatch; accumulates gradients into `grads` when given.
pub fn actor_loss(
    model: &Model,
    mb: &Minibatch,
    w: &LossWeights,
    counters: &mut Counters,
    mut grads: Option<&mut ModelGrads>,
) -> Result<LossBreakdown> {
    let n = mb.n_agents;
    let rows = mb.rows();
    let samples = mb.samples();
    if rows == 0 || !rows.is_multiple_of(n) {
        return Err(Error::shape("minibatch rows", n * samples.max(1), rows));
    }
    let use_labels = w.hazard > 0.0;
    if use_labels && mb.labels.len() != rows {
        return Err(Error::shape("hazard labels", rows, mb.labels.len()));
    }

    let msg = match &model.message {
        Some(head) if w.fresh_contexts || use_labels => {
            counters.message_forwards += 1;
            Some(head.forward(mb.obs.view())?)
        }
        _ => None,
    };
    let fresh;
    let contexts = match (&msg, w.fresh_contexts) {
        (Some(m), true) => {
            fresh = contexts_from_senders(m, &mb.senders, n, mb.k);
            &fresh
        }
        _ => &mb.contexts,
    };
    let mut msg_grad = msg.as_ref().map(|m| MessageGrad::zeros(rows, m.x.ncols()));

    let scale = 1.0 / rows as f64;
    let mut out = LossBreakdown {
        write_coef: w.write,
        hazard_coef: w.hazard,
        entropy_coef: w.entropy,
        ..Default::default()
    };

    for (a_idx, actor) in model.actors.iter().enumerate() {
        let agents: Vec<usize> = if model.actors.len() == 1 { (0..n).collect() } else { vec![a_idx] };
        let row_ids: Vec<usize> = (0..samples).flat_map(|s| agents.iter().map(move |&i| s * n + i)).collect();
        let obs = mb.obs.select(ndarray::Axis(0), &row_ids);
        let ctx = contexts.select(ndarray::Axis(0), &row_ids);
        let tape = actor.forward(obs.view(), ctx.view())?;
        let head_width = actor.kind.head_width();
        let mut d_head = Array2::zeros((row_ids.len(), head_width));
        let mut d_log_std = vec![0.0; if let PolicyKind::Gaussian { act_dim } = actor.kind { act_dim } else { 0 }];
        for (k, &r) in row_ids.iter().enumerate() {
            let dist = &tape.outputs[k];
            let action = mb.actions.row(r);
            let action = action.as_slice().expect("standard layout");
            let new_lp = dist.log_prob(action);
            let log_ratio = new_lp - mb.old_log_probs[r];
            let (term, d_term) = surrogate_term(log_ratio, mb.advantages[r], w.clip_eps);
            out.clip -= term * scale;
            out.approx_kl -= log_ratio * scale;
            let entropy = dist.entropy();
            out.entropy += entropy * scale;
            if grads.is_some() {
                let d_lp = -d_term * scale;
                let (g_head, g_ls) = dist.log_prob_grad(action);
                let (e_head, e_ls) = dist.entropy_grad();
                let d_ent = -w.entropy * scale;
                for j in 0..head_width {
                    d_head[[k, j]] = d_lp * g_head[j] + d_ent * e_head[j];
                }
                for j in 0..d_log_std.len() {
                    d_log_std[j] += d_lp * g_ls[j] + d_ent * e_ls[j];
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let d_ctx = actor.backward(&tape, d_head.view(), &d_log_std, &mut g.actors[a_idx]);
            if let (Some(mg), true) = (msg_grad.as_mut(), w.fresh_contexts) {
                scatter_context_grad(mg, &d_ctx, &row_ids, &mb.senders, n, mb.k);
            }
        }
    }

    out.write_term = mb.writes.iter().filter(|&&b| b).count() as f64 * scale;

    if use_labels {
        let m = msg.as_ref().expect("message head runs when labels are used");
        let logits = m.logit.as_slice().expect("contiguous logits");
        let omega = positive_weight(mb.labels.iter().copied());
        out.wbce = wbce(logits, &mb.labels, omega);
        if let Some(mg) = msg_grad.as_mut().filter(|_| grads.is_some()) {
            counters.wbce_grad_passes += 1;
            for r in 0..rows {
                mg.logit[r] += w.hazard * scale * wbce_grad(logits[r], mb.labels[r], omega);
            }
        }
    }

    if let (Some(g), Some(m), Some(mg), Some(head)) = (grads, &msg, &msg_grad, &model.message) {
        head.backward(m, mg, &mut g.message);
    }
    Ok(out)
}

/// Log-probabilities of the stored actions under the current parameters, in
/// minibatch row order.
pub fn log_probs(model: &Model, mb: &Minibatch, fresh_contexts: bool) -> Result<Vec<f64>> {
    let n = mb.n_agents;
    let fresh;
    let contexts = match (&model.message, fresh_contexts) {
        (Some(head), true) => {
            fresh = contexts_from_senders(&head.forward(mb.obs.view())?, &mb.senders, n, mb.k);
            &fresh
        }
        _ => &mb.contexts,
    };
    let mut out = vec![0.0; mb.rows()];
    for (a_idx, actor) in model.actors.iter().enumerate() {
        let row_ids: Vec<usize> = (0..mb.rows()).filter(|r| model.actors.len() == 1 || r % n == a_idx).collect();
        let tape = actor.forward(
            mb.obs.select(ndarray::Axis(0), &row_ids).view(),
            contexts.select(ndarray::Axis(0), &row_ids).view(),
        )?;
        for (k, &r) in row_ids.iter().enumerate() {
            out[r] = tape.outputs[k].log_prob(mb.actions.row(r).as_slice().expect("standard layout"));
        }
    }
    Ok(out)
}

fn scatter_context_grad(mg: &mut MessageGrad, d_ctx: &Array2<f64>, row_ids: &[usize], senders: &[usize], n: usize, k: usize) {
    let width = d_ctx.ncols() / k;
    for (kk, &r) in row_ids.iter().enumerate() {
        let base = r - r % n;
        let g = d_ctx.row(kk);
        let g = g.as_slice().expect("standard layout");
        for q in 0..k {
            let j = senders[r * k + q];
            if j != super::buffer::NO_SENDER {
                mg.add_psi(base + j, &g[q * width..(q + 1) * width]);
            }
        }
    }
}

/// Mean squared error of both critics against their return targets.
pub fn critic_loss(model: &Model, mb: &Minibatch, grads: Option<&mut ModelGrads>) -> Result<(f64, f64)> {
    let rows = mb.rows() as f64;
    let (tape_r, v_r) = model.critic_r.forward(mb.critic_inputs.view())?;
    let (tape_c, v_c) = model.critic_c.forward(mb.critic_inputs.view())?;
    let err_r: Array1<f64> = &v_r - &Array1::from(mb.ret_r.clone());
    let err_c: Array1<f64> = &v_c - &Array1::from(mb.ret_c.clone());
    let loss_r = err_r.mapv(|e| e * e).sum() / rows;
    let loss_c = err_c.mapv(|e| e * e).sum() / rows;
    if let Some(g) = grads {
        model.critic_r.backward(&tape_r, &err_r.mapv(|e| 2.0 * e / rows), &mut g.critic_r);
        model.critic_c.backward(&tape_c, &err_c.mapv(|e| 2.0 * e / rows), &mut g.critic_c);
    }
    Ok((loss_r, loss_c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hybrid_examples() {
        assert_eq!(hybrid_advantage(&[1.0], &[0.5], 0.1), vec![0.95]);
        let r = [0.3, -1.2, 4.0];
        assert_eq!(hybrid_advantage(&r, &[7.0, 1.0, -2.0], 0.0), r.to_vec());
        assert_eq!(hybrid_advantage(&r, &[0.0; 3], 37.5), r.to_vec());
    }

    #[test]
    fn surrogate_examples() {
        let a = [0.5, -1.0, 2.0];
        let lp = [-1.0, -0.3, -2.2];
        let want = -(a.iter().sum::<f64>()) / 3.0;
        assert!((clip_surrogate(&lp, &lp, &a, 0.2) - want).abs() < 1e-15);
        let up = 1.5f64.ln();
        assert!((clip_surrogate(&[up], &[0.0], &[1.0], 0.2) + 1.2).abs() < 1e-12);
        assert!((clip_surrogate(&[up], &[0.0], &[-1.0], 0.2) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn wbce_examples() {
        assert!((wbce(&[0.0], &[true], 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(wbce(&[20.0], &[true], 1.0) < 1e-8);
    }

    #[test]
    fn unit_weight_matches_plain_bce() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(1..30);
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
            let naive = logits
                .iter()
                .zip(&labels)
                .map(|(&l, &h)| {
                    let p = 1.0 / (1.0 + (-l).exp());
                    if h { -p.ln() } else { -(1.0 - p).ln() }
                })
                .sum::<f64>()
                / n as f64;
            assert!((wbce(&logits, &labels, 1.0) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_keeps_order() {
        let mut a = vec![3.0, -1.0, 0.5, 10.0];
        normalize(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(a[3] > a[0] && a[0] > a[2] && a[2] > a[1]);
        let mut flat = vec![2.0; 5];
        normalize(&mut flat);
        assert!(flat.iter().all(|&v| v == 0.0));
    }
}
