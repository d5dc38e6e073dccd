use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::TaskDataset;
use crate::engine::{init_params, optimizer_step, predict, ModelConfig, OptimizerState, ParamVector};
use crate::error::{Error, Result};
use crate::experiments::{derive_seed, CurvePoint, EvalMatrix, TrainSpec};
use crate::strategies::{encode_state, Strategy, StrategyHyper, StrategyKind};

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_FISHER: u64 = 4;

const EVAL_CHUNK: usize = 256;

/// Fraction of `dataset` classified correctly.
pub fn accuracy(params: &ParamVector, config: &ModelConfig, dataset: &TaskDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("task {} has no samples to evaluate", dataset.task_id)));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let logits = predict(params, config, &dataset.inputs.gather(chunk))?;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == usize::from(dataset.labels[i]))
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn check_tasks(config: &ModelConfig, tasks: &[TaskDataset]) -> Result<()> {
    if tasks.is_empty() {
        return Err(Error::Usage("a sequence needs at least one task".into()));
    }
    for t in tasks {
        let [_, steps, channels] = t.inputs.shape();
        if steps != config.seq_len || channels != config.channels {
            return Err(Error::shape(
                format!("windows of {}x{}", config.seq_len, config.channels),
                format!("{steps}x{channels} in task {}", t.task_id),
            ));
        }
        if let Some(&bad) = t.labels.iter().find(|&&l| usize::from(l) >= config.output_dim) {
            return Err(Error::Data(format!(
                "label {bad} in task {} exceeds {} outputs",
                t.task_id, config.output_dim
            )));
        }
    }
    Ok(())
}

fn evaluate_all(params: &ParamVector, config: &ModelConfig, valid: &[TaskDataset]) -> Result<Vec<f64>> {
    valid.iter().map(|v| accuracy(params, config, v)).collect()
}

/// Trains `kind` on `tasks` in order and evaluates every task's held-out
/// split after every phase. Deterministic for a given `seed`; the model
/// initialization, splits and batch order depend only on `seed`, so runs of
/// different strategies with the same seed are paired.
pub fn run_sequence(
    kind: StrategyKind,
    hyper: &StrategyHyper,
    config: &ModelConfig,
    train_spec: &TrainSpec,
    tasks: &[TaskDataset],
    seed: u64,
) -> Result<EvalMatrix> {
    config.validate()?;
    hyper.validate()?;
    train_spec.validate()?;
    check_tasks(config, tasks)?;

    let split_seed = derive_seed(seed, STREAM_SPLIT);
    let mut train = Vec::with_capacity(tasks.len());
    let mut valid = Vec::with_capacity(tasks.len());
    for (position, task) in tasks.iter().enumerate() {
        let (mut t, mut v) = task.split(train_spec.valid_fraction, derive_seed(split_seed, position as u64))?;
        train_spec.normalize(t.inputs.data_mut());
        train_spec.normalize(v.inputs.data_mut());
        train.push(t);
        valid.push(v);
    }

    let mut params = init_params(config, derive_seed(seed, STREAM_INIT))?;
    let mut strategy = Strategy::new(kind, hyper.clone(), params.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE));
    let fisher_seed = derive_seed(seed, STREAM_FISHER);
    let mut optimizer = OptimizerState::new(config.optimizer, params.len());

    let mut matrix = EvalMatrix {
        task_ids: tasks.iter().map(|t| t.task_id.clone()).collect(),
        acc: Vec::with_capacity(tasks.len()),
        curve: Vec::new(),
        state_bytes: Vec::with_capacity(tasks.len()),
    };
    let track = strategy.tracks_steps();
    let mut before = Vec::new();

    for (phase, data) in train.iter().enumerate() {
        if train_spec.reset_optimizer {
            optimizer = OptimizerState::new(config.optimizer, params.len());
        }
        strategy.begin_task(&params);
        let labels = data.labels_usize();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut step = 0usize;
        for _ in 0..train_spec.epochs_per_task {
            order.shuffle(&mut shuffle_rng);
            for batch_idx in order.chunks(config.batch_size) {
                let batch = data.inputs.gather(batch_idx);
                let batch_labels: Vec<usize> = batch_idx.iter().map(|&i| labels[i]).collect();
                let report = strategy.loss(&params, config, &batch, &batch_labels)?;
                if !report.total.is_finite() {
                    return Err(Error::Training {
                        phase,
                        step,
                        message: format!(
                            "{} loss is {} (data {}, penalty {})",
                            kind.label(),
                            report.total,
                            report.data,
                            report.penalty
                        ),
                    });
                }
                if track {
                    before.clear();
                    before.extend_from_slice(params.values());
                }
                optimizer_step(&mut params, &report.grad, &mut optimizer, config.learning_rate).map_err(
                    |e| Error::Training {
                        phase,
                        step,
                        message: e.to_string(),
                    },
                )?;
                if track {
                    for (b, p) in before.iter_mut().zip(params.values()) {
                        *b = p - *b;
                    }
                    strategy.after_step(&report.grad, &before)?;
                }
                step += 1;
                if train_spec.eval_every > 0 && step.is_multiple_of(train_spec.eval_every) {
                    matrix.curve.push(CurvePoint {
                        phase,
                        step,
                        accuracies: evaluate_all(&params, config, &valid)?,
                    });
                }
            }
        }
        strategy.end_task(&params, config, data, derive_seed(fisher_seed, phase as u64))?;
        matrix.acc.push(evaluate_all(&params, config, &valid)?);
        matrix
            .state_bytes
            .push(encode_state(&strategy.state, params.layout())?.len());
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_press_catalog, PressGenConfig};
    use crate::engine::OptimizerKind;

    fn setup(n_tasks: usize) -> (ModelConfig, Vec<TaskDataset>) {
        let press = PressGenConfig {
            window_len: 12,
            n_pumps: 3,
            samples_per_class: 10,
            ..PressGenConfig::default()
        };
        let tasks = generate_press_catalog(n_tasks, &press, 5).unwrap();
        let config = ModelConfig {
            hidden_size: 4,
            hidden_layers: 1,
            batch_size: 8,
            learning_rate: 0.01,
            ..ModelConfig::with_window(12, 3)
        };
        (config, tasks)
    }

    fn quick() -> TrainSpec {
        TrainSpec {
            epochs_per_task: 2,
            ..TrainSpec::default()
        }
    }

    fn hyper() -> StrategyHyper {
        StrategyHyper {
            fisher_samples: 8,
            ..StrategyHyper::default()
        }
    }

    #[test]
    fn matrix_shape_and_range() {
        let (config, tasks) = setup(3);
        let spec = TrainSpec {
            eval_every: 2,
            ..quick()
        };
        for kind in StrategyKind::ALL {
            let m = run_sequence(kind, &hyper(), &config, &spec, &tasks, 1).unwrap();
            assert_eq!(m.acc.len(), 3);
            assert!(m.acc.iter().all(|r| r.len() == 3));
            assert!(m.acc.iter().flatten().all(|a| (0.0..=1.0).contains(a)));
            assert_eq!(m.state_bytes.len(), 3);
            assert!(!m.curve.is_empty());
            assert!(m.curve.windows(2).all(|w| (w[0].phase, w[0].step) < (w[1].phase, w[1].step)));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (config, tasks) = setup(2);
        for kind in [StrategyKind::Ewc, StrategyKind::Si, StrategyKind::Lwf] {
            let a = run_sequence(kind, &hyper(), &config, &quick(), &tasks, 3).unwrap();
            let b = run_sequence(kind, &hyper(), &config, &quick(), &tasks, 3).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_task_is_identical_for_every_strategy() {
        let (config, tasks) = setup(1);
        let base = run_sequence(StrategyKind::None, &hyper(), &config, &quick(), &tasks, 9).unwrap();
        for kind in StrategyKind::ALL {
            let m = run_sequence(kind, &hyper(), &config, &quick(), &tasks, 9).unwrap();
            assert_eq!(m.acc, base.acc, "{kind}");
        }
    }

    #[test]
    fn zero_weights_reproduce_the_baseline_bitwise() {
        let (config, tasks) = setup(3);
        let zero = StrategyHyper {
            lambda_ewc: 0.0,
            c_si: 0.0,
            r_lwf: 0.0,
            ..hyper()
        };
        let base = run_sequence(StrategyKind::None, &zero, &config, &quick(), &tasks, 4).unwrap();
        for kind in StrategyKind::ALL {
            let m = run_sequence(kind, &zero, &config, &quick(), &tasks, 4).unwrap();
            let bits = |m: &EvalMatrix| -> Vec<u64> { m.acc.iter().flatten().map(|a| a.to_bits()).collect() };
            assert_eq!(bits(&m), bits(&base), "{kind}");
        }
    }

    #[test]
    fn divergence_reports_phase_and_step() {
        let (mut config, tasks) = setup(2);
        config.optimizer = OptimizerKind::Sgd;
        config.learning_rate = f64::MAX;
        let err = run_sequence(StrategyKind::None, &hyper(), &config, &quick(), &tasks, 0).unwrap_err();
        assert!(matches!(err, Error::Training { phase: 0, .. }), "{err}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut config, tasks) = setup(2);
        config.channels = 4;
        config.input_dim = 48;
        assert!(matches!(
            run_sequence(StrategyKind::None, &hyper(), &config, &quick(), &tasks, 0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            run_sequence(StrategyKind::None, &hyper(), &config, &quick(), &[], 0),
            Err(Error::Usage(_))
        ));
    }
}
