//! Hyperparameter sweep over the desk presets, driven by environment
//! variables: SEED, CSEED (catalog seed), SEQ, LEN, EPOCHS, LR, LAMBDA, GAMMA,
//! FS (Fisher samples), KINDS, and for press SPC, NOISE, SPREAD. PERMUTED=1
//! switches to the permuted benchmark (SIDE, CLASSES, H).
//!
//! ```text
//! LAMBDA=30 SEQ=4 cargo run --release --example calibrate
//! ```

use std::time::Instant;

use forge_cl::data::{generate_permuted_tasks, generate_press_catalog, PermutationSource, PermutedBenchConfig, PressGenConfig};
use forge_cl::engine::ModelConfig;
use forge_cl::experiments::{run_campaign, TrainSpec};
use forge_cl::strategies::{StrategyHyper, StrategyKind};

fn arg<T: std::str::FromStr>(name: &str, default: T) -> T {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let d = PressGenConfig::desk();
    let press = PressGenConfig {
        samples_per_class: arg("SPC", d.samples_per_class),
        noise_std: arg("NOISE", d.noise_std),
        share_spread: arg("SPREAD", d.share_spread),
        ..d
    };
    let permuted = arg("PERMUTED", 0) == 1;
    let side: usize = arg("SIDE", 8);
    let (catalog, config, spec) = if permuted {
        let cfg = PermutedBenchConfig {
            image_side: side,
            n_classes: arg("CLASSES", 4),
            source: PermutationSource::Synthetic {
                samples_per_class: arg("SPC", 100),
                noise_std: arg("NOISE", 0.3),
            },
            seed: arg("CSEED", 1),
            ..PermutedBenchConfig::default()
        };
        let config = ModelConfig {
            input_dim: side * side,
            seq_len: side,
            channels: side,
            output_dim: cfg.n_classes,
            learning_rate: arg("LR", 0.003),
            hidden_size: arg("H", 64),
            ..ModelConfig::desk()
        };
        (generate_permuted_tasks(&cfg).unwrap(), config, TrainSpec { epochs_per_task: arg("EPOCHS", 5), ..TrainSpec::default() })
    } else {
        let config = ModelConfig { learning_rate: arg("LR", 0.003), ..ModelConfig::desk() };
        (generate_press_catalog(15, &press, arg("CSEED", 1)).unwrap(), config, TrainSpec { epochs_per_task: arg("EPOCHS", 5), ..TrainSpec::press() })
    };
    let hyper = StrategyHyper {
        lambda_ewc: arg("LAMBDA", 10.0),
        gamma_ewc: arg("GAMMA", 10.0),
        fisher_samples: arg("FS", 200),
        ..StrategyHyper::desk()
    };
    let kinds: Vec<StrategyKind> = std::env::var("KINDS")
        .unwrap_or("none,ewc,online-ewc".into())
        .split(',')
        .map(|k| k.parse().unwrap())
        .collect();
    let t0 = Instant::now();
    let c = run_campaign(&kinds, &hyper, &config, &spec, &catalog, arg("SEQ", 20), arg("LEN", 5), arg("SEED", 0)).unwrap();
    println!("elapsed {:.1}s", t0.elapsed().as_secs_f64());
    for (k, ms) in &c.runs {
        let s = c.summary.get(*k).unwrap();
        let diag: f64 = ms.iter().map(|m| (0..m.len()).map(|i| m.acc[i][i]).sum::<f64>() / m.len() as f64).sum::<f64>() / ms.len() as f64;
        println!(
            "{:10} diag {diag:.3} drop {:.3} best {:.3} mean {:.3} worst {:.3}",
            k.label(), s.mean_peak - s.mean, s.best, s.mean, s.worst
        );
    }
}
