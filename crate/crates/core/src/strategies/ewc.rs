//! Elastic weight consolidation, per-task and online.

use crate::engine::{Gradient, ParamVector};
use crate::error::{Error, Result};
use crate::strategies::fisher::FisherDiag;

/// Parameters at the end of a task together with their Fisher weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub params: ParamVector,
    pub fisher: FisherDiag,
}

/// One anchor per completed task.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EwcState {
    pub tasks: Vec<Anchor>,
}

/// A single running anchor whose Fisher accumulates over tasks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OnlineEwcState {
    pub running: Option<Anchor>,
    pub tasks_seen: usize,
}

fn check(params: &ParamVector, anchor: &Anchor) -> Result<()> {
    params.check_congruent(anchor.params.layout())?;
    if anchor.fisher.len() != params.len() {
        return Err(Error::StateCorruption(format!(
            "Fisher has {} entries for {} parameters",
            anchor.fisher.len(),
            params.len()
        )));
    }
    Ok(())
}

/// Adds `weight · Σ_i F_i (θ_i − θ*_i)²` to `value` and its gradient to `grad`.
pub(crate) fn accumulate_quadratic(
    params: &[f64],
    anchor: &[f64],
    importance: &[f64],
    weight: f64,
    value: &mut f64,
    grad: &mut [f64],
) {
    let mut sum = 0.0;
    for (((g, &p), &a), &f) in grad.iter_mut().zip(params).zip(anchor).zip(importance) {
        let d = p - a;
        sum += f * d * d;
        *g += 2.0 * weight * f * d;
    }
    *value += weight * sum;
}

/// `λ · Σ_t Σ_i F_t,i (θ_i − θ*_t,i)²` and its gradient
/// `2λ · Σ_t F_t ⊙ (θ − θ*_t)`.
pub fn penalty_ewc(params: &ParamVector, state: &EwcState, lambda: f64) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros(params.layout().clone());
    let mut value = 0.0;
    for anchor in &state.tasks {
        check(params, anchor)?;
        accumulate_quadratic(
            params.values(),
            anchor.params.values(),
            anchor.fisher.values(),
            lambda,
            &mut value,
            grad.values_mut(),
        );
    }
    Ok((value, grad))
}

/// Appends a snapshot of the current parameters with this task's Fisher.
pub fn consolidate_ewc(state: &mut EwcState, params_after_task: &ParamVector, fisher: FisherDiag) {
    state.tasks.push(Anchor {
        params: params_after_task.clone(),
        fisher,
    });
}

/// `F ← γ·F_prev + F_new`, anchor ← current parameters.
pub fn consolidate_online_ewc(
    state: &mut OnlineEwcState,
    params_after_task: &ParamVector,
    fisher: FisherDiag,
    gamma: f64,
) -> Result<()> {
    let merged = match state.running.take() {
        None => fisher,
        Some(prev) => {
            if prev.fisher.len() != fisher.len() {
                return Err(Error::StateCorruption("Fisher length changed between tasks".into()));
            }
            FisherDiag::new(
                prev.fisher
                    .values()
                    .iter()
                    .zip(fisher.values())
                    .map(|(p, n)| gamma * p + n)
                    .collect(),
            )?
        }
    };
    state.running = Some(Anchor {
        params: params_after_task.clone(),
        fisher: merged,
    });
    state.tasks_seen += 1;
    Ok(())
}

/// `λ · Σ_i F_i (θ_i − θ*_i)²` over the single running anchor.
pub fn penalty_online_ewc(
    params: &ParamVector,
    state: &OnlineEwcState,
    lambda: f64,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros(params.layout().clone());
    let mut value = 0.0;
    if let Some(anchor) = &state.running {
        check(params, anchor)?;
        accumulate_quadratic(
            params.values(),
            anchor.params.values(),
            anchor.fisher.values(),
            lambda,
            &mut value,
            grad.values_mut(),
        );
    }
    Ok((value, grad))
}
