use serde::{Deserialize, Serialize};

use crate::engine::params::{Gradient, ParamVector};
use crate::error::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Moment estimates and step counter of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let moments = match kind {
            OptimizerKind::Adam => len,
            OptimizerKind::Sgd => 0,
        };
        Self {
            kind,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
            step: 0,
        }
    }
}

/// Applies one update in place. A non-finite gradient leaves both the
/// parameters and the state untouched.
pub fn optimizer_step(
    params: &mut ParamVector,
    grads: &Gradient,
    state: &mut OptimizerState,
    learning_rate: f64,
) -> Result<()> {
    if grads.values().len() != params.len() {
        return Err(Error::shape(params.len(), grads.values().len()));
    }
    if let Some(index) = grads.values().iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient {
            step: state.step + 1,
            index,
        });
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.values_mut().iter_mut().zip(grads.values()) {
                *p -= learning_rate * g;
            }
        }
        OptimizerKind::Adam => {
            if state.first_moment.len() != params.len() {
                return Err(Error::shape(params.len(), state.first_moment.len()));
            }
            let t = state.step as i32;
            let correction1 = 1.0 - BETA1.powi(t);
            let correction2 = 1.0 - BETA2.powi(t);
            let values = params.values_mut();
            for (((p, &g), m), v) in values
                .iter_mut()
                .zip(grads.values())
                .zip(state.first_moment.iter_mut())
                .zip(state.second_moment.iter_mut())
            {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
    }
    Ok(())
}
