//! Finite-difference verification of the data loss and of every strategy's
//! regularizer gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::gradcheck::{check_gradient, coordinates_to_check, grad_check_at};
use crate::engine::{init_params, Gradient, Matrix, ModelConfig, ParamVector, Tensor3};
use crate::error::Result;
use crate::strategies::lwf::distillation_term;
use crate::strategies::{
    consolidate_ewc, consolidate_online_ewc, penalty, si_consolidate, si_step_accumulate, EwcState,
    FisherDiag, OnlineEwcState, SiState, StrategyHyper, StrategyKind, StrategyState,
};

pub const LOSS_THRESHOLD: f64 = 1e-4;
pub const PENALTY_THRESHOLD: f64 = 1e-8;
/// Step for the cross-entropy check.
pub const LOSS_EPS: f64 = 1e-5;
/// Central differences are exact on quadratics, so a wide step only reduces
/// cancellation error.
const QUADRATIC_EPS: f64 = 0.1;
const SOFTMAX_EPS: f64 = 1e-4;
const CORRUPTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckLine {
    pub kind: StrategyKind,
    /// What was differenced.
    pub target: &'static str,
    pub max_relative_error: f64,
    pub threshold: f64,
}

impl GradcheckLine {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.threshold
    }
}

/// Small network used when no model is configured: 1634 parameters.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        hidden_layers: 1,
        hidden_size: 16,
        batch_size: 4,
        ..ModelConfig::with_window(8, 8)
    }
}

fn random_batch(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<(Tensor3, Vec<usize>)> {
    let b = 4;
    let data = (0..b * config.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..b).map(|i| i % config.output_dim).collect();
    Ok((Tensor3::new([b, config.seq_len, config.channels], data)?, labels))
}

fn jitter(params: &ParamVector, rng: &mut ChaCha8Rng, scale: f64) -> ParamVector {
    let mut out = params.clone();
    out.values_mut().iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    out
}

fn random_fisher(len: usize, rng: &mut ChaCha8Rng) -> Result<FisherDiag> {
    FisherDiag::new((0..len).map(|_| rng.gen_range(0.0..1e-3)).collect())
}

fn quadratic_state(kind: StrategyKind, params: &ParamVector, hyper: &StrategyHyper, rng: &mut ChaCha8Rng) -> Result<StrategyState> {
    let n = params.len();
    Ok(match kind {
        StrategyKind::Ewc => {
            let mut s = EwcState::default();
            for _ in 0..2 {
                consolidate_ewc(&mut s, &jitter(params, rng, 0.1), random_fisher(n, rng)?);
            }
            StrategyState::Ewc(s)
        }
        StrategyKind::OnlineEwc => {
            let mut s = OnlineEwcState::default();
            for _ in 0..2 {
                consolidate_online_ewc(&mut s, &jitter(params, rng, 0.1), random_fisher(n, rng)?, hyper.gamma_ewc)?;
            }
            StrategyState::OnlineEwc(s)
        }
        _ => {
            let mut s = SiState::new(n);
            s.task_start = Some(jitter(params, rng, 0.1));
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect();
            let g = Gradient::from_values(params.layout().clone(), g)?;
            si_step_accumulate(&mut s, &g, &d)?;
            si_consolidate(&mut s, &jitter(params, rng, 0.1), hyper.xi_si)?;
            StrategyState::Si(s)
        }
    })
}

fn penalty_line(kind: StrategyKind, params: &ParamVector, hyper: &StrategyHyper, corrupt: bool, rng: &mut ChaCha8Rng) -> Result<GradcheckLine> {
    let state = quadratic_state(kind, params, hyper, rng)?;
    let (_, grad) = penalty(hyper, params, &state)?.expect("consolidated state has a penalty");
    let mut analytic = grad.values().to_vec();
    if corrupt {
        analytic[0] += CORRUPTION;
    }
    let layout = params.layout().clone();
    let report = check_gradient(
        |x| {
            let probe = ParamVector::from_values(layout.clone(), x.to_vec()).expect("congruent probe");
            penalty(hyper, &probe, &state)
                .ok()
                .flatten()
                .map_or(f64::NAN, |(v, _)| v)
        },
        params.values(),
        &analytic,
        QUADRATIC_EPS,
        &coordinates_to_check(params.len(), 0x9e7),
    );
    Ok(GradcheckLine {
        kind,
        target: "penalty wrt parameters",
        max_relative_error: report.max_relative_error,
        threshold: PENALTY_THRESHOLD,
    })
}

/// LwF has no parameter-space penalty of its own; its distillation term is
/// checked against the student logits it is defined on.
fn distillation_line(hyper: &StrategyHyper, corrupt: bool, rng: &mut ChaCha8Rng) -> Result<GradcheckLine> {
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let teacher = Matrix::from_rows(&rows);
    let student_rows: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let student = Matrix::from_rows(&student_rows);
    let weight = hyper.r_lwf * hyper.t_lwf * hyper.t_lwf;
    let (_, dz) = distillation_term(&teacher, &student, hyper.t_lwf)?;
    let mut analytic: Vec<f64> = dz.data.iter().map(|g| weight * g).collect();
    if corrupt {
        analytic[0] += CORRUPTION;
    }
    let (rows_n, cols) = (student.rows, student.cols);
    let report = check_gradient(
        |x| {
            let mut z = Matrix::zeros(rows_n, cols);
            z.data.copy_from_slice(x);
            distillation_term(&teacher, &z, hyper.t_lwf).map_or(f64::NAN, |(v, _)| weight * v)
        },
        &student.data,
        &analytic,
        SOFTMAX_EPS,
        &(0..student.data.len()).collect::<Vec<_>>(),
    );
    Ok(GradcheckLine {
        kind: StrategyKind::Lwf,
        target: "distillation wrt logits",
        max_relative_error: report.max_relative_error,
        threshold: PENALTY_THRESHOLD,
    })
}

/// One line per strategy kind: the data loss for `None`, the regularizer for
/// the others. `corrupt` perturbs every analytic gradient (negative control).
pub fn verify_gradients(config: &ModelConfig, hyper: &StrategyHyper, seed: u64, corrupt: bool) -> Result<Vec<GradcheckLine>> {
    config.validate()?;
    hyper.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(config, seed)?;
    let (batch, labels) = random_batch(config, &mut rng)?;

    let loss = if corrupt {
        let (_, grad) = crate::engine::loss_and_grad(&params, config, &batch, &labels)?;
        let mut analytic = grad.values().to_vec();
        analytic[0] += CORRUPTION;
        let layout = params.layout().clone();
        check_gradient(
            |x| {
                let probe = ParamVector::from_values(layout.clone(), x.to_vec()).expect("congruent probe");
                crate::engine::predict(&probe, config, &batch)
                    .and_then(|l| crate::engine::loss_ce(&l, &labels))
                    .unwrap_or(f64::NAN)
            },
            params.values(),
            &analytic,
            LOSS_EPS,
            &coordinates_to_check(params.len(), 0x5eed),
        )
        .max_relative_error
    } else {
        grad_check_at(&params, config, &batch, &labels, LOSS_EPS)?.max_relative_error
    };

    let mut lines = vec![GradcheckLine {
        kind: StrategyKind::None,
        target: "cross-entropy wrt parameters",
        max_relative_error: loss,
        threshold: LOSS_THRESHOLD,
    }];
    for kind in [StrategyKind::Ewc, StrategyKind::OnlineEwc, StrategyKind::Si] {
        lines.push(penalty_line(kind, &params, hyper, corrupt, &mut rng)?);
    }
    lines.push(distillation_line(hyper, corrupt, &mut rng)?);
    Ok(lines)
}
