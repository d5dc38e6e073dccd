//! Task datasets: the synthetic press generator, the permuted-pixel
//! benchmark and the on-disk dataset format.

pub mod format;
pub mod idx;
pub mod permuted;
pub mod press;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Tensor3;
use crate::error::{Error, Result};

pub use format::{load_dataset, save_dataset};
pub use permuted::{generate_permuted_tasks, PermutationSource, PermutedBenchConfig};
pub use press::{
    generate_press_catalog, generate_press_task, DegradationOnset, PressGenConfig, ProductParams,
};

/// Generator parameters a dataset was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "generator")]
pub enum DatasetMeta {
    Press {
        config: PressGenConfig,
        product: ProductParams,
        /// Nominal fraction of the total pressure each pump carries.
        pump_shares: Vec<f64>,
        task_seed: u64,
    },
    Permuted {
        task_index: usize,
        image_side: usize,
        n_classes: usize,
        /// Pixel permutation applied to every image of this task.
        permutation: Vec<u32>,
        source: String,
    },
    /// Subset of another dataset (e.g. the validation split).
    Split {
        parent: Box<DatasetMeta>,
        part: String,
    },
}

/// Labeled windows of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    /// `[N, T, C]`.
    pub inputs: Tensor3,
    pub labels: Vec<u8>,
    pub meta: DatasetMeta,
}

impl TaskDataset {
    pub fn new(task_id: String, inputs: Tensor3, labels: Vec<u8>, meta: DatasetMeta) -> Result<Self> {
        let ds = Self {
            task_id,
            inputs,
            labels,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.inputs.len() {
            return Err(Error::shape(
                format!("{} labels", self.inputs.len()),
                self.labels.len(),
            ));
        }
        if self.labels.len() < 2 {
            return Err(Error::Data(format!(
                "task {} needs at least two samples",
                self.task_id
            )));
        }
        let first = self.labels[0];
        if self.labels.iter().all(|&y| y == first) {
            return Err(Error::Data(format!(
                "task {} contains a single class",
                self.task_id
            )));
        }
        if let Some(pos) = self.inputs.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "task {}: non-finite input at flat index {pos}",
                self.task_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| usize::from(y)).collect()
    }

    /// Number of samples carrying each label value `0..n_classes`.
    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &y in &self.labels {
            if let Some(c) = counts.get_mut(usize::from(y)) {
                *c += 1;
            }
        }
        counts
    }

    pub fn subset(&self, indices: &[usize], part: &str) -> TaskDataset {
        TaskDataset {
            task_id: self.task_id.clone(),
            inputs: self.inputs.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: DatasetMeta::Split {
                parent: Box::new(self.meta.clone()),
                part: part.to_string(),
            },
        }
    }

    /// Stratified split: `valid_fraction` of every class (at least one sample
    /// each) goes to the second dataset.
    pub fn split(&self, valid_fraction: f64, seed: u64) -> Result<(TaskDataset, TaskDataset)> {
        if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1), got {valid_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_label = self.labels.iter().copied().max().unwrap_or(0);
        let (mut train, mut valid) = (Vec::new(), Vec::new());
        for class in 0..=max_label {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] == class)
                .collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < 2 {
                return Err(Error::Data(format!(
                    "class {class} of task {} is too small to split",
                    self.task_id
                )));
            }
            members.shuffle(&mut rng);
            let n_valid = ((members.len() as f64 * valid_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            valid.extend_from_slice(&members[..n_valid]);
            train.extend_from_slice(&members[n_valid..]);
        }
        train.sort_unstable();
        valid.sort_unstable();
        Ok((self.subset(&train, "train"), self.subset(&valid, "valid")))
    }
}
