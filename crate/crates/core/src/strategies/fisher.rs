//! Diagonal Fisher information estimates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::engine::loss::softmax;
use crate::engine::{backward_from_logits, forward, ModelConfig, Matrix, ParamVector};
use crate::error::{Error, Result};

/// Which label the per-sample log-likelihood gradient is taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FisherMode {
    /// Labels sampled from the model's own predictive distribution.
    #[default]
    True,
    /// Ground-truth labels ("empirical Fisher").
    Empirical,
}

/// Nonnegative per-parameter Fisher diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag(Vec<f64>);

impl FisherDiag {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::StateCorruption(format!(
                "Fisher entry {i} is {} (must be finite and nonnegative)",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn sample_label(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// `F_i = (1/n) Σ_s (∂ log p(y_s | x_s; θ) / ∂θ_i)²` over `n_samples` inputs
/// drawn from `dataset` (cycling through a seeded shuffle), with `y_s` chosen
/// according to `mode`.
pub fn estimate_fisher_diag(
    params: &ParamVector,
    config: &ModelConfig,
    dataset: &TaskDataset,
    n_samples: usize,
    seed: u64,
    mode: FisherMode,
) -> Result<FisherDiag> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot estimate Fisher on an empty dataset".into()));
    }
    if n_samples == 0 {
        return Err(Error::Config("fisher_samples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut acc = vec![0.0; params.len()];
    for s in 0..n_samples {
        let idx = order[s % order.len()];
        let x = dataset.inputs.gather(&[idx]);
        let (logits, trace) = forward(params, config, &x)?;
        let probs = softmax(&logits);
        let y = match mode {
            FisherMode::True => sample_label(probs.row(0), &mut rng),
            FisherMode::Empirical => usize::from(dataset.labels[idx]),
        };
        // ∂(−log p_y)/∂z = p − e_y; the sign vanishes when squared
        let mut dlogits = Matrix::zeros(1, config.output_dim);
        dlogits.data.copy_from_slice(probs.row(0));
        dlogits.data[y] -= 1.0;
        let grad = backward_from_logits(&trace, params, config, &dlogits)?;
        for (a, g) in acc.iter_mut().zip(grad.values()) {
            *a += g * g;
        }
    }
    let n = n_samples as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    FisherDiag::new(acc)
}
