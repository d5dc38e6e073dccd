use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::EvalMatrix;
use crate::strategies::StrategyKind;

/// Aggregate of one strategy over all sequences of a campaign. Per-task
/// quantities are indexed by position in the sequence and averaged over
/// sequences before any order statistic is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub kind: StrategyKind,
    pub sequences: usize,
    /// Highest, mean and lowest final accuracy over task positions.
    pub best: f64,
    pub mean: f64,
    pub worst: f64,
    /// Mean over positions of each position's peak accuracy.
    pub mean_peak: f64,
    /// `mean_curve[phase]`: accuracy averaged over all tasks and sequences.
    pub mean_curve: Vec<f64>,
    /// `task_curves[position][phase]`.
    pub task_curves: Vec<Vec<f64>>,
    /// Peak minus final accuracy per position.
    pub forgetting: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub seq_len: usize,
    pub strategies: Vec<StrategySummary>,
}

impl CampaignSummary {
    pub fn get(&self, kind: StrategyKind) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.kind == kind)
    }
}

fn summarize(kind: StrategyKind, matrices: &[EvalMatrix], s: usize) -> StrategySummary {
    let n = matrices.len() as f64;
    let mut task_curves = vec![vec![0.0; s]; s];
    let mut peaks = vec![0.0; s];
    let mut forgetting = vec![0.0; s];
    // fixed reduction order: sequences in campaign order
    for m in matrices {
        for (phase, row) in m.acc.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                task_curves[j][phase] += a;
            }
        }
        for (j, f) in m.forgetting().into_iter().enumerate() {
            forgetting[j] += f;
            peaks[j] += m.peak(j);
        }
    }
    task_curves.iter_mut().flatten().for_each(|v| *v /= n);
    forgetting.iter_mut().for_each(|v| *v /= n);
    peaks.iter_mut().for_each(|v| *v /= n);
    let mean_curve = (0..s)
        .map(|phase| task_curves.iter().map(|c| c[phase]).sum::<f64>() / s as f64)
        .collect();
    let finals: Vec<f64> = task_curves.iter().map(|c| c[s - 1]).collect();
    StrategySummary {
        kind,
        sequences: matrices.len(),
        best: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: finals.iter().sum::<f64>() / s as f64,
        worst: finals.iter().copied().fold(f64::INFINITY, f64::min),
        mean_peak: peaks.iter().sum::<f64>() / s as f64,
        mean_curve,
        task_curves,
        forgetting,
    }
}

/// Final best/mean/worst, mean curves and forgetting per strategy.
pub fn compute_summary(matrices: &[(StrategyKind, Vec<EvalMatrix>)]) -> Result<CampaignSummary> {
    let s = matrices
        .iter()
        .flat_map(|(_, ms)| ms.first())
        .map(EvalMatrix::len)
        .next()
        .ok_or_else(|| Error::Usage("no evaluation matrices to summarize".into()))?;
    for (kind, ms) in matrices {
        if ms.is_empty() {
            return Err(Error::Usage(format!("no sequences for {}", kind.label())));
        }
        for m in ms {
            let square = m.len() == s && m.acc.len() == s && m.acc.iter().all(|r| r.len() == s);
            if !square {
                return Err(Error::Usage(format!(
                    "ragged evaluation matrix for {} (expected {s}x{s})",
                    kind.label()
                )));
            }
        }
    }
    Ok(CampaignSummary {
        seq_len: s,
        strategies: matrices.iter().map(|(k, ms)| summarize(*k, ms, s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(acc: Vec<Vec<f64>>) -> EvalMatrix {
        EvalMatrix {
            task_ids: (0..acc.len()).map(|i| format!("t{i}")).collect(),
            acc,
            curve: vec![],
            state_bytes: vec![],
        }
    }

    #[test]
    fn order_statistics_of_the_final_row() {
        let m = matrix(vec![
            vec![0.95, 0.5, 0.5],
            vec![0.9, 0.9, 0.6],
            vec![0.9, 0.7, 0.8],
        ]);
        let s = compute_summary(&[(StrategyKind::None, vec![m.clone()])]).unwrap();
        let n = &s.strategies[0];
        assert_eq!((n.best, n.worst), (0.9, 0.7));
        assert!((n.mean - 0.8).abs() < 1e-15);
        assert!((n.forgetting[0] - 0.05).abs() < 1e-15);
        assert!((n.forgetting[1] - 0.2).abs() < 1e-15);
        assert_eq!(n.forgetting[2], 0.0);
        assert_eq!(n.task_curves[1], vec![0.5, 0.9, 0.7]);
        assert!((n.mean_curve[0] - 0.65).abs() < 1e-15);
        assert!((n.mean_peak - (0.95 + 0.9 + 0.8) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_matrix_has_no_forgetting() {
        let m = matrix(vec![vec![0.5; 4]; 4]);
        let s = compute_summary(&[(StrategyKind::Ewc, vec![m.clone(), m])]).unwrap();
        assert!(s.strategies[0].forgetting.iter().all(|&f| f == 0.0));
        assert_eq!(s.strategies[0].mean_curve, vec![0.5; 4]);
    }

    #[test]
    fn averages_over_sequences_before_order_statistics() {
        let a = matrix(vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let b = matrix(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let s = compute_summary(&[(StrategyKind::None, vec![a, b])]).unwrap();
        let n = &s.strategies[0];
        assert_eq!((n.best, n.mean, n.worst), (0.5, 0.5, 0.5));
        assert_eq!(n.sequences, 2);
    }

    #[test]
    fn paper_online_ewc_row_is_ordered() {
        let (best, mean, worst) = (0.85, 0.82, 0.79);
        assert!(best >= mean && mean >= worst);
    }

    #[test]
    fn ragged_input_is_usage_error() {
        let a = matrix(vec![vec![0.5; 2]; 2]);
        let b = matrix(vec![vec![0.5; 3]; 3]);
        assert!(matches!(
            compute_summary(&[(StrategyKind::None, vec![a.clone()]), (StrategyKind::Ewc, vec![b])]),
            Err(Error::Usage(_))
        ));
        let mut c = a.clone();
        c.acc.pop();
        assert!(compute_summary(&[(StrategyKind::None, vec![a, c])]).is_err());
        assert!(compute_summary(&[]).is_err());
    }
}
