//! Permuted-pixel benchmark: every task shows the same images under its own
//! fixed pixel permutation, with labels shared across tasks.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{idx, DatasetMeta, TaskDataset};
use crate::engine::Tensor3;
use crate::error::{Error, Result};

/// Where the unpermuted images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PermutationSource {
    /// Per-class random prototype images plus Gaussian pixel noise, clipped
    /// to `[0, 1]`.
    Synthetic {
        samples_per_class: usize,
        noise_std: f64,
    },
    /// Images and labels in idx format; the first `limit` images are used.
    IdxFiles {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PermutedBenchConfig {
    pub n_tasks: usize,
    pub image_side: usize,
    pub n_classes: usize,
    pub source: PermutationSource,
    pub seed: u64,
}

impl Default for PermutedBenchConfig {
    fn default() -> Self {
        Self {
            n_tasks: 5,
            image_side: 8,
            n_classes: 4,
            source: PermutationSource::Synthetic {
                samples_per_class: 100,
                noise_std: 0.3,
            },
            seed: 0,
        }
    }
}

/// Identity for task 0, otherwise a seeded uniform shuffle of `0..len`.
pub fn task_permutation(len: usize, seed: u64, task: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..len as u32).collect();
    if task > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        perm.shuffle(&mut rng);
    }
    perm
}

/// `out[i] = image[perm[i]]`.
pub fn apply_permutation(image: &[f64], perm: &[u32]) -> Vec<f64> {
    perm.iter().map(|&p| image[p as usize]).collect()
}

pub fn invert_permutation(perm: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p as usize] = i as u32;
    }
    inv
}

/// True when `perm` visits every index of `0..perm.len()` exactly once.
pub fn is_bijection(perm: &[u32]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        match seen.get_mut(p as usize) {
            Some(s) if !*s => *s = true,
            _ => return false,
        }
    }
    true
}

fn synthetic_images(
    cfg: &PermutedBenchConfig,
    samples_per_class: usize,
    noise_std: f64,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let pixels = cfg.image_side * cfg.image_side;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| (0..pixels).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect())
        .collect();
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(cfg.n_classes * samples_per_class * pixels);
    let mut labels = Vec::with_capacity(cfg.n_classes * samples_per_class);
    for _ in 0..samples_per_class {
        for (class, proto) in prototypes.iter().enumerate() {
            for &p in proto {
                let v = if noise_std > 0.0 {
                    p + noise.sample(&mut rng)
                } else {
                    p
                };
                images.push(v.clamp(0.0, 1.0));
            }
            labels.push(class as u8);
        }
    }
    Ok((images, labels))
}

fn idx_images(cfg: &PermutedBenchConfig, images: &Path, labels: &Path, limit: Option<usize>) -> Result<(Vec<f64>, Vec<u8>)> {
    let img = idx::read_images(images)?;
    let lab = idx::read_labels(labels)?;
    if img.rows != cfg.image_side || img.cols != cfg.image_side {
        return Err(Error::Config(format!(
            "idx images are {}x{}, config expects side {}",
            img.rows, img.cols, cfg.image_side
        )));
    }
    if lab.len() != img.count {
        return Err(Error::Data(format!(
            "idx: {} labels for {} images",
            lab.len(),
            img.count
        )));
    }
    let n = limit.map_or(img.count, |l| l.min(img.count));
    let pixels = cfg.image_side * cfg.image_side;
    if let Some(&bad) = lab[..n].iter().find(|&&y| usize::from(y) >= cfg.n_classes) {
        return Err(Error::Data(format!(
            "idx label {bad} outside {} classes",
            cfg.n_classes
        )));
    }
    let data = img.pixels[..n * pixels]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok((data, lab[..n].to_vec()))
}

/// Builds `n_tasks` datasets; task `t` applies permutation `π_t` (identity
/// for `t = 0`) to every image. Images are viewed as `image_side` steps of
/// `image_side` channels, one row per step.
pub fn generate_permuted_tasks(cfg: &PermutedBenchConfig) -> Result<Vec<TaskDataset>> {
    if cfg.n_tasks == 0 || cfg.image_side == 0 || cfg.n_classes < 2 || cfg.n_classes > 256 {
        return Err(Error::Config(format!(
            "invalid permuted benchmark config: {} tasks, side {}, {} classes",
            cfg.n_tasks, cfg.image_side, cfg.n_classes
        )));
    }
    let (images, labels, source_name) = match &cfg.source {
        PermutationSource::Synthetic {
            samples_per_class,
            noise_std,
        } => {
            if *samples_per_class == 0 || !(*noise_std >= 0.0) {
                return Err(Error::Config("invalid synthetic pattern settings".into()));
            }
            let (i, l) = synthetic_images(cfg, *samples_per_class, *noise_std)?;
            (i, l, "synthetic-patterns".to_string())
        }
        PermutationSource::IdxFiles {
            images,
            labels,
            limit,
        } => {
            let (i, l) = idx_images(cfg, images, labels, *limit)?;
            (i, l, format!("idx:{}", images.display()))
        }
    };
    let pixels = cfg.image_side * cfg.image_side;
    let n = labels.len();
    (0..cfg.n_tasks)
        .map(|task| {
            let perm = task_permutation(pixels, cfg.seed, task);
            let mut data = Vec::with_capacity(images.len());
            for img in images.chunks_exact(pixels) {
                data.extend(apply_permutation(img, &perm));
            }
            TaskDataset::new(
                format!("perm-{task:02}"),
                Tensor3::new([n, cfg.image_side, cfg.image_side], data)?,
                labels.clone(),
                DatasetMeta::Permuted {
                    task_index: task,
                    image_side: cfg.image_side,
                    n_classes: cfg.n_classes,
                    permutation: perm,
                    source: source_name.clone(),
                },
            )
        })
        .collect()
}
