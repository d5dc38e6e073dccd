use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::engine::ModelConfig;
use crate::error::{Error, Result};
use crate::experiments::{compute_summary, derive_seed, run_sequence, CampaignSummary, EvalMatrix, TrainSpec};
use crate::strategies::{StrategyHyper, StrategyKind};

const STREAM_DRAW: u64 = 11;
const STREAM_RUN: u64 = 12;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "FORGE_CL_THREADS";

/// Tasks of one sequence, drawn without replacement from a catalog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    /// Positions in the catalog, in training order.
    pub task_indices: Vec<usize>,
    pub task_ids: Vec<String>,
    pub draw_seed: u64,
    /// Seed shared by every strategy run on this sequence.
    pub run_seed: u64,
}

/// Every run of a campaign plus its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub sequences: Vec<SequenceSpec>,
    /// Per strategy, one matrix per sequence in sequence order.
    pub runs: Vec<(StrategyKind, Vec<EvalMatrix>)>,
    pub summary: CampaignSummary,
}

/// Worker threads for campaigns: `FORGE_CL_THREADS` if set, else all cores.
pub fn campaign_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn draw_sequences(catalog: &[TaskDataset], n_sequences: usize, seq_len: usize, seed: u64) -> Result<Vec<SequenceSpec>> {
    if seq_len == 0 || seq_len > catalog.len() {
        return Err(Error::Config(format!(
            "sequence length {seq_len} must lie in 1..={} (catalog size)",
            catalog.len()
        )));
    }
    Ok((0..n_sequences as u64)
        .map(|i| {
            let draw_seed = derive_seed(derive_seed(seed, STREAM_DRAW), i);
            let mut rng = ChaCha8Rng::seed_from_u64(draw_seed);
            let task_indices = sample(&mut rng, catalog.len(), seq_len).into_vec();
            SequenceSpec {
                task_ids: task_indices.iter().map(|&t| catalog[t].task_id.clone()).collect(),
                task_indices,
                draw_seed,
                run_seed: derive_seed(derive_seed(seed, STREAM_RUN), i),
            }
        })
        .collect())
}

/// Runs every strategy in `kinds` on the same `n_sequences` random
/// sequences with the same per-sequence seeds, in parallel.
#[allow(clippy::too_many_arguments)]
pub fn run_campaign(
    kinds: &[StrategyKind],
    hyper: &StrategyHyper,
    config: &ModelConfig,
    train_spec: &TrainSpec,
    catalog: &[TaskDataset],
    n_sequences: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Campaign> {
    if n_sequences == 0 {
        return Err(Error::Config("a campaign needs at least one sequence".into()));
    }
    let mut unique: Vec<StrategyKind> = Vec::new();
    for &k in kinds {
        if !unique.contains(&k) {
            unique.push(k);
        }
    }
    if unique.is_empty() {
        return Err(Error::Config("a campaign needs at least one strategy".into()));
    }
    let sequences = draw_sequences(catalog, n_sequences, seq_len, seed)?;
    let jobs: Vec<(StrategyKind, usize)> = unique
        .iter()
        .flat_map(|&k| (0..sequences.len()).map(move |i| (k, i)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(campaign_threads())
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<EvalMatrix>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(kind, i)| {
                let spec = &sequences[i];
                let tasks: Vec<TaskDataset> = spec.task_indices.iter().map(|&t| catalog[t].clone()).collect();
                run_sequence(kind, hyper, config, train_spec, &tasks, spec.run_seed).map_err(|e| match e {
                    Error::Training { phase, step, message } => Error::Training {
                        phase,
                        step,
                        message: format!("sequence {i}, {}: {message}", kind.label()),
                    },
                    other => other,
                })
            })
            .collect()
    });

    let mut runs: Vec<(StrategyKind, Vec<EvalMatrix>)> = unique.iter().map(|&k| (k, Vec::new())).collect();
    for ((kind, _), result) in jobs.iter().zip(results) {
        let slot = runs.iter_mut().find(|(k, _)| k == kind).expect("kind registered");
        slot.1.push(result?);
    }
    let summary = compute_summary(&runs)?;
    Ok(Campaign {
        sequences,
        runs,
        summary,
    })
}
