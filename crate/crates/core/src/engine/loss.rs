//! Softmax, cross-entropy and temperature-softened probabilities.

use crate::engine::tensor::Matrix;
use crate::error::{Error, Result};

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise `log softmax(logits / temperature)`.
pub fn log_softmax(logits: &Matrix, temperature: f64) -> Matrix {
    let mut out = Matrix::zeros(logits.rows, logits.cols);
    let mut scaled = vec![0.0; logits.cols];
    for r in 0..logits.rows {
        for (s, &z) in scaled.iter_mut().zip(logits.row(r)) {
            *s = z / temperature;
        }
        let lse = log_sum_exp(&scaled);
        for (o, &s) in out.row_mut(r).iter_mut().zip(&scaled) {
            *o = s - lse;
        }
    }
    out
}

pub fn softmax(logits: &Matrix) -> Matrix {
    softmax_at(logits, 1.0)
}

fn softmax_at(logits: &Matrix, temperature: f64) -> Matrix {
    let mut out = log_softmax(logits, temperature);
    for r in 0..out.rows {
        let row = out.row_mut(r);
        for v in row.iter_mut() {
            *v = v.exp();
        }
        // renormalize so rows sum to one up to a single rounding
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Rows of `softmax(logits / temperature)`.
pub fn softened_probs(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    Ok(softmax_at(logits, temperature))
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows {
        return Err(Error::shape(
            format!("{} labels", logits.rows),
            labels.len(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols) {
        return Err(Error::Data(format!(
            "label {bad} outside [0, {})",
            logits.cols
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch.
pub fn loss_ce(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &y)| log_sum_exp(logits.row(r)) - logits.row(r)[y])
        .sum();
    Ok(total / logits.rows as f64)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn loss_ce_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let loss = loss_ce(logits, labels)?;
    let mut grad = softmax(logits);
    let scale = 1.0 / logits.rows as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss, grad))
}

/// Mean soft-target cross-entropy `−Σ_k p_k log q_k` where `q` is the
/// student's softmax at `temperature`. Returns the value and its gradient
/// with respect to the student logits.
pub fn soft_cross_entropy(
    targets: &Matrix,
    student_logits: &Matrix,
    temperature: f64,
) -> Result<(f64, Matrix)> {
    if targets.rows != student_logits.rows || targets.cols != student_logits.cols {
        return Err(Error::shape(
            format!("{}x{}", student_logits.rows, student_logits.cols),
            format!("{}x{}", targets.rows, targets.cols),
        ));
    }
    let log_q = log_softmax(student_logits, temperature);
    let n = targets.rows as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(targets.rows, targets.cols);
    for r in 0..targets.rows {
        let p = targets.row(r);
        let lq = log_q.row(r);
        let mass: f64 = p.iter().sum();
        value -= p.iter().zip(lq).map(|(a, b)| a * b).sum::<f64>();
        for (k, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (mass * lq[k].exp() - p[k]) / (temperature * n);
        }
    }
    Ok((value / n, grad))
}
