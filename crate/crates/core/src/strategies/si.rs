//! Synaptic intelligence: per-parameter importance from the path integral of
//! the training trajectory.

use crate::engine::{Gradient, ParamVector};
use crate::error::{Error, Result};
use crate::strategies::ewc::accumulate_quadratic;

#[derive(Debug, Clone, PartialEq)]
pub struct SiState {
    /// Running path integral `ω` of the current task.
    pub omega: Vec<f64>,
    /// Consolidated importance `Ω`, elementwise nonnegative.
    pub importance: Vec<f64>,
    /// Parameters at the end of the last consolidated task.
    pub anchor: Option<ParamVector>,
    /// Parameters when the current task started.
    pub task_start: Option<ParamVector>,
}

impl SiState {
    pub fn new(len: usize) -> Self {
        Self {
            omega: vec![0.0; len],
            importance: vec![0.0; len],
            anchor: None,
            task_start: None,
        }
    }
}

/// `ω_i ← ω_i − g_i Δθ_i` for one optimizer step.
pub fn si_step_accumulate(state: &mut SiState, grad: &Gradient, delta_theta: &[f64]) -> Result<()> {
    if grad.values().len() != state.omega.len() || delta_theta.len() != state.omega.len() {
        return Err(Error::StateCorruption(format!(
            "path integral over {} parameters fed {} gradients and {} deltas",
            state.omega.len(),
            grad.values().len(),
            delta_theta.len()
        )));
    }
    for ((w, g), d) in state.omega.iter_mut().zip(grad.values()).zip(delta_theta) {
        *w -= g * d;
    }
    Ok(())
}

/// Folds the finished task into `Ω`:
/// `Ω_i ← Ω_i + max(ω_i, 0) / ((θ_i^end − θ_i^start)² + ξ)`, then resets `ω`
/// and moves both the anchor and the start snapshot to `θ^end`.
pub fn si_consolidate(state: &mut SiState, params_at_task_end: &ParamVector, xi: f64) -> Result<()> {
    let start = state
        .task_start
        .as_ref()
        .ok_or_else(|| Error::Usage("SI consolidation without a task-start snapshot".into()))?;
    params_at_task_end.check_congruent(start.layout())?;
    for (((imp, w), end), begin) in state
        .importance
        .iter_mut()
        .zip(&state.omega)
        .zip(params_at_task_end.values())
        .zip(start.values())
    {
        let moved = end - begin;
        *imp += w.max(0.0) / (moved * moved + xi);
    }
    state.omega.iter_mut().for_each(|w| *w = 0.0);
    state.anchor = Some(params_at_task_end.clone());
    state.task_start = Some(params_at_task_end.clone());
    Ok(())
}

/// `c · Σ_i Ω_i (θ_i − θ*_i)²` and its gradient.
pub fn penalty_si(params: &ParamVector, state: &SiState, c: f64) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros(params.layout().clone());
    let mut value = 0.0;
    if let Some(anchor) = &state.anchor {
        params.check_congruent(anchor.layout())?;
        if state.importance.len() != params.len() {
            return Err(Error::StateCorruption("importance length mismatch".into()));
        }
        accumulate_quadratic(
            params.values(),
            anchor.values(),
            &state.importance,
            c,
            &mut value,
            grad.values_mut(),
        );
    }
    Ok((value, grad))
}
