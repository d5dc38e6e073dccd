use std::path::{Path, PathBuf};

use forge_cl::data::{generate_permuted_tasks, generate_press_catalog, load_dataset, save_dataset, TaskDataset};
use forge_cl::experiments::verify::small_config;
use forge_cl::experiments::{draw_sequences, run_campaign, run_sequence, verify_gradients, Campaign};
use forge_cl::strategies::StrategyKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{self, write_file, write_json};

const DATASET_EXT: &str = "fcl";

/// Generates the configured catalog, or loads it from `data_dir`.
pub fn catalog(config: &RunConfig) -> Result<Vec<TaskDataset>> {
    if let Some(dir) = &config.experiment.data_dir {
        return load_catalog(dir);
    }
    Ok(match config.experiment.dataset {
        DatasetKind::Press => generate_press_catalog(config.experiment.n_products, &config.press, config.experiment.seed)?,
        DatasetKind::Permuted => generate_permuted_tasks(&config.permuted)?,
    })
}

fn load_catalog(dir: &Path) -> Result<Vec<TaskDataset>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == DATASET_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no .{DATASET_EXT} datasets in {}", dir.display())));
    }
    paths.iter().map(|p| load_dataset(p).map_err(CliError::from)).collect()
}

fn short_digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))[..12].to_string()
}

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let mut config = config.clone();
    config.experiment.data_dir = None;
    let tasks = catalog(&config)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for ds in &tasks {
        let path = out.join(format!("{}.{DATASET_EXT}", ds.task_id));
        save_dataset(ds, &path)?;
        let mut counts = std::collections::BTreeMap::new();
        for &y in &ds.labels {
            *counts.entry(y).or_insert(0usize) += 1;
        }
        let balance: Vec<String> = counts.iter().map(|(c, n)| format!("{c}:{n}")).collect();
        let meta = serde_json::to_string(&ds.meta).map_err(|e| CliError::Config(e.to_string()))?;
        println!(
            "{}  N={}  classes {}  params {}",
            ds.task_id,
            ds.len(),
            balance.join(" "),
            short_digest(meta.as_bytes())
        );
    }
    println!("wrote {} datasets to {}", tasks.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct RunSidecar<'a> {
    schema_version: u32,
    config_digest: String,
    strategy: StrategyKind,
    seed: u64,
    run_seed: u64,
    task_indices: &'a [usize],
    task_ids: &'a [String],
    state_bytes: &'a [usize],
    config: &'a RunConfig,
}

pub fn run(config: &RunConfig, kind: StrategyKind, out: &Path) -> Result<()> {
    let tasks = catalog(config)?;
    let e = &config.experiment;
    let (indices, run_seed) = match &e.sequence {
        Some(seq) => {
            if let Some(&bad) = seq.iter().find(|&&i| i >= tasks.len()) {
                return Err(CliError::Config(format!("sequence index {bad} outside a catalog of {}", tasks.len())));
            }
            (seq.clone(), e.seed)
        }
        None => {
            let spec = draw_sequences(&tasks, 1, e.seq_len, e.seed)?.remove(0);
            (spec.task_indices, spec.run_seed)
        }
    };
    let selected: Vec<TaskDataset> = indices.iter().map(|&i| tasks[i].clone()).collect();
    let matrix = run_sequence(kind, &config.strategy, &config.model, &config.train, &selected, run_seed)?;

    let stem = format!("eval_{}", kind.as_str());
    write_file(&out.join(format!("{stem}.csv")), output::eval_matrix_csv(&matrix).as_bytes())?;
    if !matrix.curve.is_empty() {
        write_file(&out.join(format!("curve_{}.csv", kind.as_str())), output::curve_csv(&matrix).as_bytes())?;
    }
    write_json(
        &out.join(format!("{stem}.json")),
        &RunSidecar {
            schema_version: output::SCHEMA_VERSION,
            config_digest: config.digest(),
            strategy: kind,
            seed: e.seed,
            run_seed,
            task_indices: &indices,
            task_ids: &matrix.task_ids,
            state_bytes: &matrix.state_bytes,
            config,
        },
    )?;
    println!("{} on {}:", kind.label(), matrix.task_ids.join(" -> "));
    for (phase, row) in matrix.acc.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.3}")).collect();
        println!("  after task {}: {}", phase + 1, cells.join(" "));
    }
    Ok(())
}

/// Everything `report` needs to rebuild the summary artifacts.
#[derive(Serialize, Deserialize)]
pub struct CampaignRecord {
    pub schema_version: u32,
    pub config_digest: String,
    pub config: RunConfig,
    pub campaign: Campaign,
}

pub const CAMPAIGN_FILE: &str = "campaign.json";

pub fn campaign(config: &RunConfig, out: &Path) -> Result<()> {
    let tasks = catalog(config)?;
    let e = &config.experiment;
    let c = run_campaign(
        &e.strategies,
        &config.strategy,
        &config.model,
        &config.train,
        &tasks,
        e.n_sequences,
        e.seq_len,
        e.seed,
    )?;
    for (kind, matrices) in &c.runs {
        for (i, m) in matrices.iter().enumerate() {
            let name = format!("{}_seq{i:02}.csv", kind.as_str());
            write_file(&out.join("matrices").join(name), output::eval_matrix_csv(m).as_bytes())?;
        }
    }
    output::write_summary(out, &c.summary)?;
    print!("{}", output::summary_table(&c.summary));
    write_json(
        &out.join(CAMPAIGN_FILE),
        &CampaignRecord {
            schema_version: output::SCHEMA_VERSION,
            config_digest: config.digest(),
            config: config.clone(),
            campaign: c,
        },
    )
}

pub fn report(dir: &Path) -> Result<()> {
    let path = dir.join(CAMPAIGN_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let record: CampaignRecord =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if record.config.digest() != record.config_digest {
        return Err(CliError::Verification(format!(
            "{} was edited: config digest does not match",
            path.display()
        )));
    }
    output::write_summary(dir, &record.campaign.summary)?;
    print!("{}", output::summary_table(&record.campaign.summary));
    Ok(())
}

/// Uses the configured model when a config file was given, otherwise a
/// small network.
pub fn gradcheck(config: Option<&RunConfig>, seed: u64, corrupt: bool) -> Result<()> {
    let (model, hyper) = match config {
        Some(c) => (c.model.clone(), c.strategy.clone()),
        None => (small_config(), forge_cl::strategies::StrategyHyper::default()),
    };
    let lines = verify_gradients(&model, &hyper, seed, corrupt)?;
    for l in &lines {
        println!(
            "{:<10} {:<30} max relative error {:.3e} (threshold {:.0e}) {}",
            l.kind.label(),
            l.target,
            l.max_relative_error,
            l.threshold,
            if l.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.kind.label()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient mismatch for {}", failed.join(", "))))
    }
}
