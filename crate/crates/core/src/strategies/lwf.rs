//! Learning without forgetting: distillation towards a frozen copy of the
//! model taken before the current task.

use crate::engine::loss::{loss_ce_with_grad, soft_cross_entropy};
use crate::engine::{backward_from_logits, forward, predict, softened_probs};
use crate::engine::{Gradient, Matrix, ModelConfig, ParamVector, Tensor3};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LwfState {
    pub teacher: Option<ParamVector>,
}

/// Freezes a copy of `params` as the distillation teacher.
pub fn lwf_snapshot_teacher(state: &mut LwfState, params: &ParamVector) {
    state.teacher = Some(params.clone());
}

/// Breakdown of the LwF objective on one batch.
#[derive(Debug, Clone)]
pub struct LwfLoss {
    pub total: f64,
    pub task_loss: f64,
    /// Soft cross-entropy between teacher and student at temperature `t`,
    /// before the `r · t²` weight.
    pub distillation: f64,
    pub grad: Gradient,
}

/// Distillation term alone: `CE(softmax(z_teacher/t), log softmax(z/t))`
/// and its gradient with respect to the student logits.
pub fn distillation_term(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    temperature: f64,
) -> Result<(f64, Matrix)> {
    let targets = softened_probs(teacher_logits, temperature)?;
    soft_cross_entropy(&targets, student_logits, temperature)
}

/// `loss_ce + r · t² · CE(teacher_t, student_t)` on the same batch; the
/// teacher only supplies targets.
pub fn lwf_loss(
    params: &ParamVector,
    config: &ModelConfig,
    batch: &Tensor3,
    labels: &[usize],
    state: &LwfState,
    temperature: f64,
    weight: f64,
) -> Result<LwfLoss> {
    let (logits, trace) = forward(params, config, batch)?;
    let (task_loss, mut dlogits) = loss_ce_with_grad(&logits, labels)?;
    let mut distillation = 0.0;
    let mut total = task_loss;
    if let Some(teacher) = state.teacher.as_ref().filter(|_| weight != 0.0) {
        params.check_congruent(teacher.layout())?;
        let teacher_logits = predict(teacher, config, batch)?;
        let (value, dsoft) = distillation_term(&teacher_logits, &logits, temperature)?;
        let scale = weight * temperature * temperature;
        distillation = value;
        total += scale * value;
        for (d, s) in dlogits.data.iter_mut().zip(&dsoft.data) {
            *d += scale * s;
        }
    }
    let grad = backward_from_logits(&trace, params, config, &dlogits)?;
    Ok(LwfLoss {
        total,
        task_loss,
        distillation,
        grad,
    })
}
