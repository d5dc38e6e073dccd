//! Regularization strategies behind a common task lifecycle.

pub mod checkpoint;
pub mod ewc;
pub mod fisher;
pub mod lwf;
pub mod si;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::engine::loss::loss_ce_with_grad;
use crate::engine::{backward_from_logits, forward, Gradient, ModelConfig, ParamVector, Tensor3};
use crate::error::{Error, Result};

pub use checkpoint::{decode_state, encode_state, load_state, save_state};
pub use ewc::{
    consolidate_ewc, consolidate_online_ewc, penalty_ewc, penalty_online_ewc, Anchor, EwcState,
    OnlineEwcState,
};
pub use fisher::{estimate_fisher_diag, FisherDiag, FisherMode};
pub use lwf::{lwf_loss, lwf_snapshot_teacher, LwfLoss, LwfState};
pub use si::{penalty_si, si_consolidate, si_step_accumulate, SiState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    None,
    Ewc,
    OnlineEwc,
    Si,
    Lwf,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::None,
        StrategyKind::Ewc,
        StrategyKind::OnlineEwc,
        StrategyKind::Si,
        StrategyKind::Lwf,
    ];

    /// Command-line spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Ewc => "ewc",
            StrategyKind::OnlineEwc => "online-ewc",
            StrategyKind::Si => "si",
            StrategyKind::Lwf => "lwf",
        }
    }

    /// Name used in tables and plot legends.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::None => "None",
            StrategyKind::Ewc => "EWC",
            StrategyKind::OnlineEwc => "OnlineEWC",
            StrategyKind::Si => "SI",
            StrategyKind::Lwf => "LwF",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag)).copied()
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy `{s}` (expected none, ewc, online-ewc, si or lwf)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyHyper {
    pub lambda_ewc: f64,
    pub gamma_ewc: f64,
    pub c_si: f64,
    /// Damping in the SI importance denominator.
    pub xi_si: f64,
    pub t_lwf: f64,
    pub r_lwf: f64,
    pub fisher_samples: usize,
    pub fisher_mode: FisherMode,
}

impl Default for StrategyHyper {
    fn default() -> Self {
        Self {
            lambda_ewc: 1_000_000.0,
            gamma_ewc: 10.0,
            c_si: 300.0,
            xi_si: 1e-3,
            t_lwf: 10.0,
            r_lwf: 1.0,
            fisher_samples: 1024,
            fisher_mode: FisherMode::True,
        }
    }
}

impl StrategyHyper {
    /// Full-scale defaults with `lambda_ewc` rescaled for the desk-scale model,
    /// whose Fisher values are far larger than those of the full network.
    pub fn desk() -> Self {
        Self {
            lambda_ewc: 10.0,
            fisher_samples: 200,
            ..Self::default()
        }
    }

    /// Desk-scale settings for the permuted-pixel benchmark, whose Fisher
    /// values are smaller than those of press windows.
    pub fn desk_permuted() -> Self {
        Self {
            lambda_ewc: 100.0,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_ewc", self.lambda_ewc),
            ("gamma_ewc", self.gamma_ewc),
            ("c_si", self.c_si),
            ("r_lwf", self.r_lwf),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [("xi_si", self.xi_si), ("t_lwf", self.t_lwf)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.fisher_samples == 0 {
            return Err(Error::Config("fisher_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyState {
    None,
    Ewc(EwcState),
    OnlineEwc(OnlineEwcState),
    Si(SiState),
    Lwf(LwfState),
}

impl StrategyState {
    /// Empty state for `kind` over `param_len` parameters.
    pub fn new(kind: StrategyKind, param_len: usize) -> Self {
        match kind {
            StrategyKind::None => StrategyState::None,
            StrategyKind::Ewc => StrategyState::Ewc(EwcState::default()),
            StrategyKind::OnlineEwc => StrategyState::OnlineEwc(OnlineEwcState::default()),
            StrategyKind::Si => StrategyState::Si(SiState::new(param_len)),
            StrategyKind::Lwf => StrategyState::Lwf(LwfState::default()),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyState::None => StrategyKind::None,
            StrategyState::Ewc(_) => StrategyKind::Ewc,
            StrategyState::OnlineEwc(_) => StrategyKind::OnlineEwc,
            StrategyState::Si(_) => StrategyKind::Si,
            StrategyState::Lwf(_) => StrategyKind::Lwf,
        }
    }
}

/// Objective of one batch split into its parts.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    /// Cross-entropy on the batch labels.
    pub data: f64,
    /// Regularization term as added to `total` (already weighted).
    pub penalty: f64,
    pub grad: Gradient,
}

/// Penalty of a quadratic strategy alone, `None` when it would be exactly
/// zero (no consolidated task or zero weight).
pub fn penalty(
    hyper: &StrategyHyper,
    params: &ParamVector,
    state: &StrategyState,
) -> Result<Option<(f64, Gradient)>> {
    Ok(match state {
        StrategyState::Ewc(s) if hyper.lambda_ewc != 0.0 && !s.tasks.is_empty() => {
            Some(penalty_ewc(params, s, hyper.lambda_ewc)?)
        }
        StrategyState::OnlineEwc(s) if hyper.lambda_ewc != 0.0 && s.running.is_some() => {
            Some(penalty_online_ewc(params, s, hyper.lambda_ewc)?)
        }
        StrategyState::Si(s) if hyper.c_si != 0.0 && s.anchor.is_some() => {
            Some(penalty_si(params, s, hyper.c_si)?)
        }
        _ => None,
    })
}

/// Cross-entropy plus the strategy's regularizer, with its gradient.
pub fn total_loss(
    kind: StrategyKind,
    hyper: &StrategyHyper,
    params: &ParamVector,
    config: &ModelConfig,
    batch: &Tensor3,
    labels: &[usize],
    state: &StrategyState,
) -> Result<LossReport> {
    if state.kind() != kind {
        return Err(Error::Usage(format!(
            "{} loss requested with {} state",
            kind.label(),
            state.kind().label()
        )));
    }
    if let StrategyState::Lwf(s) = state {
        let out = lwf_loss(params, config, batch, labels, s, hyper.t_lwf, hyper.r_lwf)?;
        return Ok(LossReport {
            total: out.total,
            data: out.task_loss,
            penalty: out.total - out.task_loss,
            grad: out.grad,
        });
    }
    let (logits, trace) = forward(params, config, batch)?;
    let (data, dlogits) = loss_ce_with_grad(&logits, labels)?;
    let mut grad = backward_from_logits(&trace, params, config, &dlogits)?;
    let mut total = data;
    let mut penalty_value = 0.0;
    if let Some((value, pgrad)) = penalty(hyper, params, state)? {
        grad.add_assign(&pgrad)?;
        total += value;
        penalty_value = value;
    }
    Ok(LossReport {
        total,
        data,
        penalty: penalty_value,
        grad,
    })
}

/// One strategy's state driven through a task sequence.
#[derive(Debug, Clone)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub hyper: StrategyHyper,
    pub state: StrategyState,
    tasks_completed: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind, hyper: StrategyHyper, param_len: usize) -> Self {
        Self {
            kind,
            hyper,
            state: StrategyState::new(kind, param_len),
            tasks_completed: 0,
        }
    }

    pub fn tasks_completed(&self) -> usize {
        self.tasks_completed
    }

    /// Snapshots taken before training on a new task: the LwF teacher (from
    /// the second task on) and the SI start point.
    pub fn begin_task(&mut self, params: &ParamVector) {
        match &mut self.state {
            StrategyState::Lwf(s) if self.tasks_completed > 0 => lwf_snapshot_teacher(s, params),
            StrategyState::Si(s) => {
                s.omega.iter_mut().for_each(|w| *w = 0.0);
                s.task_start = Some(params.clone());
            }
            _ => {}
        }
    }

    pub fn loss(
        &self,
        params: &ParamVector,
        config: &ModelConfig,
        batch: &Tensor3,
        labels: &[usize],
    ) -> Result<LossReport> {
        total_loss(self.kind, &self.hyper, params, config, batch, labels, &self.state)
    }

    /// Feeds one optimizer step (gradient used and realized parameter change)
    /// to strategies that track the trajectory.
    pub fn after_step(&mut self, grad: &Gradient, delta_theta: &[f64]) -> Result<()> {
        if let StrategyState::Si(s) = &mut self.state {
            si_step_accumulate(s, grad, delta_theta)?;
        }
        Ok(())
    }

    /// Whether `after_step` has any effect.
    pub fn tracks_steps(&self) -> bool {
        matches!(self.state, StrategyState::Si(_))
    }

    /// Consolidates the finished task. `train_data` feeds the Fisher
    /// estimate, drawn with its own `fisher_seed`.
    pub fn end_task(
        &mut self,
        params: &ParamVector,
        config: &ModelConfig,
        train_data: &TaskDataset,
        fisher_seed: u64,
    ) -> Result<()> {
        let hyper = &self.hyper;
        let fisher = || {
            estimate_fisher_diag(
                params,
                config,
                train_data,
                hyper.fisher_samples,
                fisher_seed,
                hyper.fisher_mode,
            )
        };
        match &mut self.state {
            StrategyState::Ewc(s) => consolidate_ewc(s, params, fisher()?),
            StrategyState::OnlineEwc(s) => consolidate_online_ewc(s, params, fisher()?, hyper.gamma_ewc)?,
            StrategyState::Si(s) => si_consolidate(s, params, hyper.xi_si)?,
            StrategyState::None | StrategyState::Lwf(_) => {}
        }
        self.tasks_completed += 1;
        Ok(())
    }
}
