//! Small tanh MLP with second-order time jets, reverse-mode parameter
//! gradients and Adam.

mod adam;
mod mlp;
mod objective;

pub use adam::AdamState;
pub use mlp::{Checkpoint, Jet2, JetAdjoint, JetTrace, MlpParams};
pub use objective::{loss_grad, loss_value, LossGrad, Objective};
