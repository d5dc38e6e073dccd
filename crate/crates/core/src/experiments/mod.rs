//! Sequential training protocol and campaigns over random task sequences.

mod campaign;
mod runner;
mod summary;
pub mod verify;

use serde::{Deserialize, Serialize};

use crate::data::press::{PRESS_INPUT_OFFSET, PRESS_INPUT_SCALE};
use crate::error::{Error, Result};

pub use campaign::{campaign_threads, draw_sequences, run_campaign, Campaign, SequenceSpec};
pub use runner::{accuracy, run_sequence};
pub use summary::{compute_summary, CampaignSummary, StrategySummary};
pub use verify::{verify_gradients, GradcheckLine};

/// Training schedule. Learning rate and batch size live in
/// [`ModelConfig`](crate::engine::ModelConfig) next to the optimizer choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSpec {
    pub epochs_per_task: usize,
    /// Optimizer steps between curve points; 0 records only the per-phase rows.
    pub eval_every: usize,
    /// Share of every task held out for evaluation.
    pub valid_fraction: f64,
    /// Start every task with fresh optimizer moments.
    pub reset_optimizer: bool,
    /// Inputs are fed to the model as `(x - input_offset) / input_scale`.
    pub input_offset: f64,
    pub input_scale: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs_per_task: 5,
            eval_every: 0,
            valid_fraction: 0.2,
            reset_optimizer: true,
            input_offset: 0.0,
            input_scale: 1.0,
        }
    }
}

impl TrainSpec {
    /// Default schedule with the fixed input transform for press windows.
    pub fn press() -> Self {
        Self {
            input_offset: PRESS_INPUT_OFFSET,
            input_scale: PRESS_INPUT_SCALE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_task == 0 {
            return Err(Error::Config("epochs_per_task must be at least 1".into()));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::Config(format!(
                "valid_fraction must lie in (0, 1), got {}",
                self.valid_fraction
            )));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite() && self.input_offset.is_finite()) {
            return Err(Error::Config(format!(
                "input_scale must be positive and input_offset finite, got {} and {}",
                self.input_scale, self.input_offset
            )));
        }
        Ok(())
    }

    /// Applies the fixed input transform in place.
    pub fn normalize(&self, inputs: &mut [f64]) {
        if self.input_offset == 0.0 && self.input_scale == 1.0 {
            return;
        }
        for v in inputs {
            *v = (*v - self.input_offset) / self.input_scale;
        }
    }
}

/// Accuracies on every task of a sequence, one curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub phase: usize,
    /// Optimizer steps taken within the phase.
    pub step: usize,
    pub accuracies: Vec<f64>,
}

/// Held-out accuracy of every task after every training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub task_ids: Vec<String>,
    /// `acc[phase][task]`.
    pub acc: Vec<Vec<f64>>,
    pub curve: Vec<CurvePoint>,
    /// Serialized strategy-state size after each phase, in bytes.
    pub state_bytes: Vec<usize>,
}

impl EvalMatrix {
    pub fn len(&self) -> usize {
        self.task_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.task_ids.is_empty()
    }

    pub fn final_row(&self) -> &[f64] {
        self.acc.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Highest accuracy task `j` reached after any phase.
    pub fn peak(&self, j: usize) -> f64 {
        self.acc.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_i acc[i][j] − acc[S−1][j]` per task.
    pub fn forgetting(&self) -> Vec<f64> {
        let last = self.final_row();
        (0..self.len()).map(|j| self.peak(j) - last[j]).collect()
    }
}

/// SplitMix64 finalizer; decorrelates the seeds of independent streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forgetting_is_peak_minus_final() {
        let m = EvalMatrix {
            task_ids: vec!["a".into(), "b".into()],
            acc: vec![vec![0.9, 0.5], vec![0.6, 0.8]],
            curve: vec![],
            state_bytes: vec![],
        };
        assert_eq!(m.forgetting(), vec![0.9 - 0.6, 0.0]);
        assert_eq!(m.final_row(), &[0.6, 0.8]);
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a: Vec<u64> = (0..100).map(|s| derive_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(derive_seed(7, 3), a[3]);
    }

    #[test]
    fn train_spec_validation() {
        TrainSpec::default().validate().unwrap();
        assert!(TrainSpec { epochs_per_task: 0, ..Default::default() }.validate().is_err());
        assert!(TrainSpec { valid_fraction: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainSpec { input_scale: 0.0, ..Default::default() }.validate().is_err());
        let spec = TrainSpec { input_offset: 1.0, input_scale: 2.0, ..Default::default() };
        let mut x = [1.0, 3.0, -1.0];
        spec.normalize(&mut x);
        assert_eq!(x, [0.0, 1.0, -1.0]);
    }
}
