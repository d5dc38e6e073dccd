//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::loss::loss_ce;
use crate::engine::lstm::{loss_and_grad, predict};
use crate::engine::params::{init_params, ModelConfig, ParamVector};
use crate::engine::tensor::Tensor3;
use crate::error::Result;

/// Above this many parameters only a random subset is differenced.
pub const FULL_CHECK_LIMIT: usize = 2000;
/// Size of the random subset for larger models.
pub const SAMPLED_COORDINATES: usize = 256;
/// Denominator floor so coordinates whose true derivative is zero are
/// judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// Coordinate attaining `max_relative_error`.
    pub worst_index: usize,
    pub coordinates_checked: usize,
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic` against `(f(x + εe_i) − f(x − εe_i)) / 2ε` on the
/// given coordinates.
pub fn check_gradient<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
    coordinates: &[usize],
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_abs_error: 0.0,
        worst_index: coordinates.first().copied().unwrap_or(0),
        coordinates_checked: coordinates.len(),
    };
    for &i in coordinates {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = relative_error(analytic[i], numeric);
        report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
        // NaN compares false; make sure it still surfaces
        if rel > report.max_relative_error || rel.is_nan() {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    report
}

/// Every coordinate for small models, otherwise a seeded random subset.
pub fn coordinates_to_check(len: usize, seed: u64) -> Vec<usize> {
    if len <= FULL_CHECK_LIMIT {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, len, SAMPLED_COORDINATES).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Checks the cross-entropy gradient of a freshly initialized network on one
/// batch and returns the worst relative error.
pub fn grad_check(
    config: &ModelConfig,
    seed: u64,
    batch: &Tensor3,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    let params = init_params(config, seed)?;
    grad_check_at(&params, config, batch, labels, eps)
}

pub fn grad_check_at(
    params: &ParamVector,
    config: &ModelConfig,
    batch: &Tensor3,
    labels: &[usize],
    eps: f64,
) -> Result<GradCheckReport> {
    let (_, grad) = loss_and_grad(params, config, batch, labels)?;
    let layout = params.layout().clone();
    let coords = coordinates_to_check(params.len(), 0x5eed);
    let mut failure = None;
    let report = check_gradient(
        |x| {
            let probe = ParamVector::from_values(layout.clone(), x.to_vec())
                .expect("congruent probe");
            match predict(&probe, config, batch).and_then(|l| loss_ce(&l, labels)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        params.values(),
        grad.values(),
        eps,
        &coords,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn batch(config: &ModelConfig, b: usize, seed: u64) -> (Tensor3, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * config.input_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let labels = (0..b).map(|_| rng.gen_range(0..config.output_dim)).collect();
        (
            Tensor3::new([b, config.seq_len, config.channels], data).unwrap(),
            labels,
        )
    }

    #[test]
    fn quadratic_toy_is_exact() {
        let x = [0.5, -1.25, 3.0, 0.0];
        let report = check_gradient(
            |v| 0.5 * v.iter().map(|a| a * a).sum::<f64>(),
            &x,
            &x,
            1e-4,
            &[0, 1, 2, 3],
        );
        assert!(report.max_relative_error < 1e-10, "{report:?}");
    }

    #[test]
    fn small_lstm_passes() {
        let config = ModelConfig {
            hidden_size: 4,
            hidden_layers: 2,
            output_dim: 3,
            ..ModelConfig::with_window(3, 2)
        };
        let (x, y) = batch(&config, 4, 3);
        let report = grad_check(&config, 7, &x, &y, 1e-5).unwrap();
        assert_eq!(report.coordinates_checked, config.param_count());
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }

    #[test]
    fn tiny_eps_degrades_without_failing() {
        let config = ModelConfig {
            hidden_size: 4,
            hidden_layers: 1,
            ..ModelConfig::with_window(3, 2)
        };
        let (x, y) = batch(&config, 4, 3);
        let good = grad_check(&config, 7, &x, &y, 1e-5).unwrap();
        let bad = grad_check(&config, 7, &x, &y, 1e-10).unwrap();
        assert!(bad.max_relative_error > good.max_relative_error);
    }

    #[test]
    fn large_models_sample_a_subset() {
        let coords = coordinates_to_check(50_000, 1);
        assert_eq!(coords.len(), SAMPLED_COORDINATES);
        assert!(coords.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(coordinates_to_check(10, 1), (0..10).collect::<Vec<_>>());
    }
}
