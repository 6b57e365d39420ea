//! Central finite-difference oracle for the actor and critic losses on tiny
//! random networks.

use hazboard::env::{ActionSpace, EnvSpec};
use hazboard::trainer::{actor_loss, critic_loss, log_probs, Counters, LossWeights, Minibatch, Model, NO_SENDER};
use hazboard::ExperimentConfig;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-6;

pub struct Case {
    pub model: Model,
    pub mb: Minibatch,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Three agents, hidden width 8, five samples, `k = 2`.
pub fn random_case(seed: u64, discrete: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    let obs_dim = 3;
    let mut cfg = ExperimentConfig::default();
    cfg.train.hidden_size = 8;
    cfg.blackboard.d_msg = 2;
    cfg.blackboard.k = 2;
    cfg.blackboard.embed_dim = 4;
    let action_space = if discrete {
        ActionSpace::Discrete { n_actions: 4 }
    } else {
        ActionSpace::Continuous { act_dim: 2, low: -1.0, high: 1.0 }
    };
    let spec = EnvSpec {
        n_agents: n,
        obs_dim,
        action_space,
        horizon: 10,
        cost_budget: 25.0,
    };
    let mut model = Model::new(&cfg, &spec, &mut rng);
    // Larger output weights than the initializer so policy gradients are not
    // vanishingly small.
    for a in &mut model.actors {
        let r = a.policy.range();
        for v in &mut a.params[r] {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let samples = 5;
    let rows = samples * n;
    let k = 2;
    let gauss = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);
    let obs = Array2::from_shape_fn((rows, obs_dim), |_| gauss(&mut rng));
    let mut senders = Vec::with_capacity(rows * k);
    for r in 0..rows {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != r % n).collect();
        others.shuffle(&mut rng);
        let used = rng.random_range(0..=k);
        for q in 0..k {
            senders.push(if q < used { others[q] } else { NO_SENDER });
        }
    }
    let ctx_len = cfg.context_len();
    let action_width = if discrete { 1 } else { 2 };
    let actions = Array2::from_shape_fn((rows, action_width), |_| {
        if discrete {
            rng.random_range(0..4) as f64
        } else {
            0.5 * gauss(&mut rng)
        }
    });
    let mut mb = Minibatch {
        n_agents: n,
        obs,
        contexts: Array2::zeros((rows, ctx_len)),
        senders,
        k,
        actions,
        old_log_probs: vec![0.0; rows],
        advantages: (0..rows).map(|_| gauss(&mut rng)).collect(),
        labels: (0..rows).map(|_| rng.random_bool(0.3)).collect(),
        writes: (0..rows).map(|_| rng.random_bool(0.5)).collect(),
        critic_inputs: Array2::zeros((rows, model.critic_r.input_width())),
        ret_r: (0..rows).map(|_| gauss(&mut rng)).collect(),
        ret_c: (0..rows).map(|_| gauss(&mut rng).abs()).collect(),
    };
    for s in 0..samples {
        for i in 0..n {
            let joint: Vec<Vec<f64>> = (0..n).map(|j| mb.obs.row(s * n + j).to_vec()).collect();
            let joint: Vec<&[f64]> = joint.iter().map(|v| v.as_slice()).collect();
            let row = mb.critic_inputs.row_mut(s * n + i);
            model.critic_r.fill_input(&joint, i, row.into_slice().unwrap()).unwrap();
        }
    }
    // Behaviour log-probs near the current ones so both clip branches occur.
    let current = log_probs(&model, &mb, true).unwrap();
    for (old, cur) in mb.old_log_probs.iter_mut().zip(current) {
        *old = cur + 0.3 * gauss(&mut rng);
    }
    Case { model, mb }
}

fn perturbed<F: Fn(&Model) -> f64>(model: &Model, slot: usize, idx: usize, f: &F) -> f64 {
    let mut plus = model.clone();
    plus.param_slices_mut()[slot][idx] += STEP;
    let mut minus = model.clone();
    minus.param_slices_mut()[slot][idx] -= STEP;
    (f(&plus) - f(&minus)) / (2.0 * STEP)
}

/// Largest relative error between analytic and central-difference
/// gradients of `weights`' actor objective over every parameter.
pub fn actor_max_error(case: &Case, weights: &LossWeights) -> f64 {
    let mut grads = case.model.zero_grads();
    actor_loss(&case.model, &case.mb, weights, &mut Counters::default(), Some(&mut grads)).unwrap();
    let f = |m: &Model| {
        actor_loss(m, &case.mb, weights, &mut Counters::default(), None)
            .unwrap()
            .actor_total()
    };
    max_error(&case.model, &grads.slices_mut().iter().map(|s| s.to_vec()).collect::<Vec<_>>(), &f)
}

pub fn critic_max_error(case: &Case) -> f64 {
    let mut grads = case.model.zero_grads();
    critic_loss(&case.model, &case.mb, Some(&mut grads)).unwrap();
    let f = |m: &Model| {
        let (a, b) = critic_loss(m, &case.mb, None).unwrap();
        a + b
    };
    max_error(&case.model, &grads.slices_mut().iter().map(|s| s.to_vec()).collect::<Vec<_>>(), &f)
}

fn max_error<F: Fn(&Model) -> f64>(model: &Model, analytic: &[Vec<f64>], f: &F) -> f64 {
    let mut worst: f64 = 0.0;
    for (slot, g) in analytic.iter().enumerate() {
        for (idx, &a) in g.iter().enumerate() {
            worst = worst.max(rel_err(a, perturbed(model, slot, idx, f)));
        }
    }
    worst
}

/// The weight settings checked: each term alone (advantages zeroed where
/// the clip term must vanish) and the full objective.
pub fn term_settings(case: &Case) -> Vec<(&'static str, LossWeights, Case)> {
    let base = LossWeights {
        clip_eps: 0.2,
        write: 0.0,
        hazard: 0.0,
        entropy: 0.0,
        fresh_contexts: true,
    };
    let no_adv = || {
        let mut mb = case.mb.clone();
        mb.advantages.iter_mut().for_each(|a| *a = 0.0);
        Case {
            model: case.model.clone(),
            mb,
        }
    };
    let same = || Case {
        model: case.model.clone(),
        mb: case.mb.clone(),
    };
    vec![
        ("clip surrogate", base, same()),
        ("hazard wbce", LossWeights { hazard: 1.0, ..base }, no_adv()),
        ("write penalty", LossWeights { write: 1.0, ..base }, no_adv()),
        ("entropy", LossWeights { entropy: 1.0, ..base }, no_adv()),
        (
            "full actor loss",
            LossWeights {
                write: 1e-3,
                hazard: 0.5,
                entropy: 0.01,
                ..base
            },
            same(),
        ),
    ]
}
