//! Differentiable numerical core: parameter storage, the stacked-LSTM
//! classifier, losses, optimizers and finite-difference verification.

pub mod gradcheck;
mod linalg;
pub mod loss;
pub mod lstm;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{loss_ce, softened_probs};
pub use lstm::{backward, backward_from_logits, forward, loss_and_grad, predict, ForwardTrace};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};
pub use params::{init_params, Gradient, ModelConfig, ParamLayout, ParamVector, Segment};
pub use tensor::{Matrix, Tensor3};
