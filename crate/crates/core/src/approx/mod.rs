//! Function approximators with hand-written reverse-mode gradients.
//!
//! Every module owns one flat `Vec<f64>` of parameters; gradients use the
//! same indexing so optimizers, clipping and checkpoints work on plain
//! slices.

mod heads;
mod mlp;
mod optim;

pub use heads::{
    positive_weight, sigmoid, softplus, wbce, wbce_grad, Actor, ActorTape, Critic, MessageBatch, MessageGrad,
    MessageHead, MessageHeadOutput, PolicyKind, PolicyOutput, TensorInfo, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Activation, MlpLayout, MlpTape};
pub use optim::{clip_grad_norm, Optimizer, OptimizerKind};

/// Gradient accumulator aligned with a module's flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients(pub Vec<f64>);

impl ParamGradients {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
