//! Acceptance suite. One line per criterion on stdout, written past the test
//! harness capture so it shows up in plain `cargo test` output.
//!
//! `FORGE_CL_ACCEPTANCE_ONLY=3,7` restricts the run to some criteria and
//! `FORGE_CL_ACCEPTANCE_REPEATS` overrides the ten ordering repetitions.
//! Both are development aids; with neither set the full suite runs.

use std::io::Write;
use std::time::{Duration, Instant};

use forge_cl::data::format::{decode_dataset, encode_dataset};
use forge_cl::data::permuted::is_bijection;
use forge_cl::data::press::pump_profile;
use forge_cl::data::{
    generate_permuted_tasks, generate_press_catalog, generate_press_task, DatasetMeta,
    DegradationOnset, PermutedBenchConfig, PressGenConfig, ProductParams, TaskDataset,
};
use forge_cl::engine::{init_params, optimizer_step, ModelConfig, OptimizerState};
use forge_cl::experiments::verify::small_config;
use forge_cl::experiments::{run_campaign, run_sequence, verify_gradients, Campaign, EvalMatrix, TrainSpec};
use forge_cl::strategies::{penalty, Strategy, StrategyHyper, StrategyKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REPEATS: usize = 10;
const ORDER_SHARE: f64 = 0.8;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn env_usize(name: &str) -> Option<usize> {
    std::env::var(name).ok().and_then(|v| v.trim().parse().ok())
}

fn selected(n: usize) -> bool {
    match std::env::var("FORGE_CL_ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---- fixtures ----

fn desk_catalog(seed: u64) -> Vec<TaskDataset> {
    generate_press_catalog(15, &PressGenConfig::desk(), seed).unwrap()
}

fn desk_campaign(kinds: &[StrategyKind], hyper: &StrategyHyper, seq_len: usize, seed: u64) -> Campaign {
    run_campaign(
        kinds,
        hyper,
        &ModelConfig::desk(),
        &TrainSpec::press(),
        &desk_catalog(seed),
        20,
        seq_len,
        seed,
    )
    .unwrap()
}

/// Tiny press tasks and a matching network for the property checks.
fn tiny() -> (ModelConfig, Vec<TaskDataset>) {
    let press = PressGenConfig {
        window_len: 16,
        n_pumps: 4,
        samples_per_class: 20,
        ..PressGenConfig::default()
    };
    let config = ModelConfig {
        hidden_size: 8,
        batch_size: 8,
        ..ModelConfig::with_window(16, 4)
    };
    (config, generate_press_catalog(3, &press, 5).unwrap())
}

fn tiny_spec() -> TrainSpec {
    TrainSpec {
        epochs_per_task: 2,
        eval_every: 3,
        ..TrainSpec::press()
    }
}

fn same_bits(a: &EvalMatrix, b: &EvalMatrix) -> bool {
    let bits = |m: &EvalMatrix| -> Vec<u64> {
        m.acc
            .iter()
            .flatten()
            .chain(m.curve.iter().flat_map(|p| p.accuracies.iter()))
            .map(|v| v.to_bits())
            .collect()
    };
    a.curve.len() == b.curve.len() && bits(a) == bits(b)
}

// ---- criteria ----

fn gradients() -> Outcome {
    let config = small_config();
    let t0 = Instant::now();
    let lines = verify_gradients(&config, &StrategyHyper::default(), 0, false).unwrap();
    let elapsed = t0.elapsed();
    let worst: Vec<String> = lines
        .iter()
        .map(|l| format!("{} {:.1e}", l.kind.label(), l.max_relative_error))
        .collect();
    let params = config.param_count();
    Outcome::new(
        lines.len() == 5 && lines.iter().all(|l| l.passed()) && params < 2000 && elapsed < Duration::from_secs(60),
        format!("{params} params, {} in {:.1}s", worst.join(", "), secs(elapsed)),
    )
}

/// Trains one task with a few real steps and consolidates it.
fn consolidate_once(strategy: &mut Strategy, config: &ModelConfig, task: &TaskDataset, params: &mut forge_cl::engine::ParamVector) {
    strategy.begin_task(params);
    let mut opt = OptimizerState::new(config.optimizer, params.len());
    let labels = task.labels_usize();
    for start in (0..24).step_by(8) {
        let idx: Vec<usize> = (start..start + 8).map(|i| (i * 7) % task.len()).collect();
        let batch = task.inputs.gather(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let report = strategy.loss(params, config, &batch, &y).unwrap();
        let before = params.values().to_vec();
        optimizer_step(params, &report.grad, &mut opt, config.learning_rate).unwrap();
        let delta: Vec<f64> = params.values().iter().zip(&before).map(|(a, b)| a - b).collect();
        strategy.after_step(&report.grad, &delta).unwrap();
    }
    strategy.end_task(params, config, task, 3).unwrap();
}

fn anchors_and_zero_weights() -> Outcome {
    let (config, tasks) = tiny();
    let hyper = StrategyHyper {
        fisher_samples: 16,
        ..StrategyHyper::desk()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [StrategyKind::Ewc, StrategyKind::OnlineEwc, StrategyKind::Si] {
        let mut params = init_params(&config, 1).unwrap();
        let mut strategy = Strategy::new(kind, hyper.clone(), params.len());
        // EWC sums one term per anchor, so only its first anchor is a zero
        let rounds = if kind == StrategyKind::Ewc { 1 } else { 2 };
        for task in &tasks[..rounds] {
            consolidate_once(&mut strategy, &config, task, &mut params);
            let (value, grad) = penalty(&hyper, &params, &strategy.state).unwrap().expect("consolidated state");
            let exact = value == 0.0 && grad.values().iter().all(|&g| g == 0.0);
            ok &= exact;
            if !exact {
                notes.push(format!("{} penalty {value:e} at its anchor", kind.label()));
            }
        }
    }

    let zero = StrategyHyper {
        lambda_ewc: 0.0,
        c_si: 0.0,
        r_lwf: 0.0,
        ..hyper
    };
    let spec = tiny_spec();
    let baseline = run_sequence(StrategyKind::None, &zero, &config, &spec, &tasks, 9).unwrap();
    for kind in [StrategyKind::Ewc, StrategyKind::OnlineEwc, StrategyKind::Si, StrategyKind::Lwf] {
        let m = run_sequence(kind, &zero, &config, &spec, &tasks, 9).unwrap();
        if !same_bits(&m, &baseline) {
            ok = false;
            notes.push(format!("{} at zero weight differs from the baseline", kind.label()));
        }
    }
    let detail = if notes.is_empty() {
        format!(
            "anchors exact for EWC, OnlineEWC, SI; 4 zero-weight trajectories bitwise equal over {} curve points",
            baseline.curve.len()
        )
    } else {
        notes.join("; ")
    };
    Outcome::new(ok, detail)
}

fn forgetting(baseline: &Campaign, elapsed: Duration) -> Outcome {
    let s = baseline.summary.get(StrategyKind::None).unwrap();
    let drop = s.mean_peak - s.mean;
    Outcome::new(
        drop >= 0.15 && elapsed < Duration::from_secs(600),
        format!(
            "peak {:.3}, final mean {:.3}, drop {drop:.3} over {} sequences in {:.0}s",
            s.mean_peak,
            s.mean,
            s.sequences,
            secs(elapsed)
        ),
    )
}

struct Repetition {
    seed: u64,
    none: (f64, f64),
    ewc: (f64, f64),
    online: (f64, f64),
}

impl Repetition {
    fn mean_ordered(&self) -> bool {
        self.online.0 >= self.ewc.0 && self.ewc.0 >= self.none.0
    }

    fn worst_ordered(&self) -> bool {
        self.online.1 >= self.ewc.1 && self.ewc.1 >= self.none.1
    }
}

fn mean_worst(c: &Campaign, kind: StrategyKind) -> (f64, f64) {
    let s = c.summary.get(kind).unwrap();
    (s.mean, s.worst)
}

fn repetition(seed: u64, baseline: Option<&Campaign>) -> (Repetition, Campaign) {
    let hyper = StrategyHyper::desk();
    let none = match baseline {
        Some(c) => mean_worst(c, StrategyKind::None),
        None => mean_worst(&desk_campaign(&[StrategyKind::None], &hyper, 5, seed), StrategyKind::None),
    };
    // strategies share per-sequence seeds, so splitting the kinds over two
    // campaigns gives the same runs as one joint campaign
    let reg = desk_campaign(&[StrategyKind::Ewc, StrategyKind::OnlineEwc], &hyper, 5, seed);
    let rep = Repetition {
        seed,
        none,
        ewc: mean_worst(&reg, StrategyKind::Ewc),
        online: mean_worst(&reg, StrategyKind::OnlineEwc),
    };
    emit(&format!(
        "  repetition seed {seed}: mean {:.3}/{:.3}/{:.3} worst {:.3}/{:.3}/{:.3} (None/EWC/OnlineEWC)",
        rep.none.0, rep.ewc.0, rep.online.0, rep.none.1, rep.ewc.1, rep.online.1
    ));
    (rep, reg)
}

fn ordering(reps: &[Repetition]) -> Outcome {
    let n = reps.len();
    let mean_ok = reps.iter().filter(|r| r.mean_ordered()).count();
    let worst_ok = reps.iter().filter(|r| r.worst_ordered()).count();
    let need = (ORDER_SHARE * n as f64).ceil() as usize;
    let misses: Vec<String> = reps
        .iter()
        .filter(|r| !(r.mean_ordered() && r.worst_ordered()))
        .map(|r| r.seed.to_string())
        .collect();
    Outcome::new(
        n > 0 && mean_ok >= need && worst_ok >= need,
        format!(
            "mean ordered in {mean_ok}/{n}, worst ordered in {worst_ok}/{n} (need {need}); unordered seeds [{}]",
            misses.join(", ")
        ),
    )
}

fn eight_tasks(five: f64) -> Outcome {
    let c = desk_campaign(&[StrategyKind::OnlineEwc], &StrategyHyper::desk(), 8, 0);
    let eight = c.summary.get(StrategyKind::OnlineEwc).unwrap().mean;
    Outcome::new(
        eight <= five + 0.02,
        format!("OnlineEWC final mean {eight:.3} on 8 tasks vs {five:.3} on 5"),
    )
}

fn permuted() -> Outcome {
    let bench = PermutedBenchConfig::default();
    let side = bench.image_side;
    let config = ModelConfig {
        input_dim: side * side,
        seq_len: side,
        channels: side,
        output_dim: bench.n_classes,
        ..ModelConfig::desk()
    };
    let tasks = generate_permuted_tasks(&bench).unwrap();
    let kinds = [StrategyKind::None, StrategyKind::Ewc, StrategyKind::OnlineEwc];
    let c = run_campaign(
        &kinds,
        &StrategyHyper::desk_permuted(),
        &config,
        &TrainSpec::default(),
        &tasks,
        5,
        tasks.len(),
        0,
    )
    .unwrap();
    let mean = |k| c.summary.get(k).unwrap().mean;
    let (none, ewc, online) = (mean(StrategyKind::None), mean(StrategyKind::Ewc), mean(StrategyKind::OnlineEwc));
    Outcome::new(
        ewc >= none + 0.10 && online >= none + 0.10,
        format!("final mean None {none:.3}, EWC {ewc:.3}, OnlineEWC {online:.3} over 5 orderings"),
    )
}

fn freezing() -> Outcome {
    let catalog = desk_catalog(0);
    let hyper = StrategyHyper {
        lambda_ewc: 1e12,
        ..StrategyHyper::desk()
    };
    let m = run_sequence(
        StrategyKind::Ewc,
        &hyper,
        &ModelConfig::desk(),
        &TrainSpec::press(),
        &catalog[..2],
        0,
    )
    .unwrap();
    let (before, after) = (m.acc[0][0], m.acc[1][0]);
    Outcome::new(
        (after - before).abs() <= 0.02,
        format!("task 1 accuracy {before:.3} before task 2, {after:.3} after; task 2 reaches {:.3}", m.acc[1][1]),
    )
}

fn memory() -> Outcome {
    let (config, _) = tiny();
    let press = PressGenConfig {
        window_len: 16,
        n_pumps: 4,
        samples_per_class: 10,
        ..PressGenConfig::default()
    };
    let tasks = generate_press_catalog(6, &press, 2).unwrap();
    let hyper = StrategyHyper {
        fisher_samples: 8,
        ..StrategyHyper::desk()
    };
    let spec = TrainSpec {
        epochs_per_task: 1,
        ..TrainSpec::press()
    };
    let p = config.param_count();
    let online = run_sequence(StrategyKind::OnlineEwc, &hyper, &config, &spec, &tasks, 1).unwrap().state_bytes;
    let ewc = run_sequence(StrategyKind::Ewc, &hyper, &config, &spec, &tasks, 1).unwrap().state_bytes;
    let constant = online.windows(2).all(|w| w[0] == w[1]);
    let slopes: Vec<usize> = ewc.windows(2).map(|w| w[1] - w[0]).collect();
    let linear = slopes.iter().all(|&s| s == 16 * p);
    Outcome::new(
        constant && linear,
        format!(
            "OnlineEWC bytes {online:?}; EWC bytes {ewc:?}, slope {:?} vs anchor+Fisher {} for {p} params",
            slopes.first(),
            16 * p
        ),
    )
}

fn decoded_equal(ds: &TaskDataset) -> bool {
    let bytes = encode_dataset(ds).unwrap();
    let back = decode_dataset(&bytes).unwrap();
    let bits = |d: &TaskDataset| d.inputs.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    back.task_id == ds.task_id
        && back.labels == ds.labels
        && back.meta == ds.meta
        && back.inputs.shape() == ds.inputs.shape()
        && bits(&back) == bits(ds)
        && encode_dataset(&back).unwrap() == bytes
}

/// One random generator setting: the compensation invariant at zero noise
/// and the value range with noise.
fn sweep_sample(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let window_len = rng.gen_range(10..=160);
    let lo = rng.gen_range(0.05..0.5);
    let cfg = PressGenConfig {
        n_pumps: rng.gen_range(2..=12),
        window_len,
        samples_per_class: 1,
        noise_std: 0.0,
        degradation_range: [lo, rng.gen_range(lo..0.95)],
        onset: if rng.gen_bool(0.5) {
            DegradationOnset::Linear
        } else {
            DegradationOnset::Step {
                at_fraction: rng.gen_range(0.0..1.0),
            }
        },
        share_spread: rng.gen_range(0.0..0.9),
        product: None,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let product = ProductParams::random(rng, window_len);
    let shares = cfg.draw_shares(rng);
    let phase = rng.gen_range(0.0..product.period);
    let pump = rng.gen_range(0..cfg.n_pumps);
    let factor = rng.gen_range(cfg.degradation_range[0]..=cfg.degradation_range[1]);
    let faulty = pump_profile(&cfg, &product, &shares, phase, Some((pump, factor)));
    let normal = pump_profile(&cfg, &product, &shares, phase, None);
    for (t, (f, n)) in faulty.chunks(cfg.n_pumps).zip(normal.chunks(cfg.n_pumps)).enumerate() {
        let nominal = product.nominal(t as f64 + phase);
        let (sf, sn) = (f.iter().sum::<f64>(), n.iter().sum::<f64>());
        if (sf - nominal).abs() > 1e-12 * nominal || (sn - nominal).abs() > 1e-12 * nominal {
            return Err(format!("sum {sf} vs nominal {nominal} at t={t} for {cfg:?}"));
        }
    }
    let noisy = PressGenConfig {
        noise_std: rng.gen_range(0.0..0.3),
        product: Some(product),
        ..cfg
    };
    let ds = generate_press_task(&noisy, rng.gen()).map_err(|e| e.to_string())?;
    let DatasetMeta::Press { pump_shares, .. } = &ds.meta else {
        return Err("press task without press metadata".into());
    };
    let (lo, hi) = noisy.value_range(&product, pump_shares);
    if !ds.inputs.data().iter().all(|&v| v >= lo && v <= hi) {
        return Err(format!("value outside [{lo}, {hi}]"));
    }
    Ok(())
}

fn data_invariants() -> Outcome {
    let mut notes = Vec::new();

    let zero_noise = PressGenConfig {
        noise_std: 0.0,
        ..PressGenConfig::desk()
    };
    let catalog = generate_press_catalog(15, &zero_noise, 0).unwrap();
    let mut sums_exact = true;
    for ds in &catalog {
        let DatasetMeta::Press { product, pump_shares, .. } = &ds.meta else { unreachable!() };
        for fault in (0..zero_noise.n_pumps).map(|k| Some((k, 0.6))) {
            let f = pump_profile(&zero_noise, product, pump_shares, 1.5, fault);
            for (t, step) in f.chunks(zero_noise.n_pumps).enumerate() {
                let nominal = product.nominal(t as f64 + 1.5);
                sums_exact &= (step.iter().sum::<f64>() - nominal).abs() <= 1e-12 * nominal;
            }
        }
    }
    if !sums_exact {
        notes.push("compensated sum differs from nominal".to_string());
    }

    let mut perms = 0;
    let mut bijective = true;
    for side in [8, 28] {
        let bench = PermutedBenchConfig {
            image_side: side,
            n_tasks: 10,
            ..PermutedBenchConfig::default()
        };
        for ds in generate_permuted_tasks(&bench).unwrap() {
            let DatasetMeta::Permuted { permutation, .. } = &ds.meta else { unreachable!() };
            bijective &= permutation.len() == side * side && is_bijection(permutation);
            perms += 1;
        }
    }
    if !bijective {
        notes.push("a permutation is not a bijection".to_string());
    }

    let permuted = generate_permuted_tasks(&PermutedBenchConfig::default()).unwrap();
    let round_trip = catalog.iter().chain(&permuted).all(decoded_equal);
    if !round_trip {
        notes.push("a dataset changed through encode/decode".to_string());
    }

    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sweep_ok = true;
    for i in 0..1000 {
        if let Err(e) = sweep_sample(&mut rng) {
            notes.push(format!("sweep sample {i}: {e}"));
            sweep_ok = false;
            break;
        }
    }
    let elapsed = t0.elapsed();
    let fast = elapsed < Duration::from_secs(60);
    let detail = format!(
        "15 products x 8 faults exact, {perms} permutations bijective, {} datasets round-trip, 1000-sample sweep in {:.1}s{}{}",
        catalog.len() + permuted.len(),
        secs(elapsed),
        if notes.is_empty() { "" } else { "; " },
        notes.join("; ")
    );
    Outcome::new(sums_exact && bijective && round_trip && sweep_ok && fast, detail)
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        emit(&format!(
            "criterion {n} {} {name}: {}",
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail
        ));
        if !outcome.passed {
            failed.push(n);
        }
    };

    if selected(1) {
        report(1, "gradient verification", gradients());
    }
    if selected(2) {
        report(2, "anchor and zero-weight properties", anchors_and_zero_weights());
    }

    let needs_baseline = selected(3) || selected(4);
    let baseline = needs_baseline.then(|| {
        let t0 = Instant::now();
        let c = desk_campaign(&[StrategyKind::None], &StrategyHyper::desk(), 5, 0);
        (c, t0.elapsed())
    });
    if selected(3) {
        let (c, elapsed) = baseline.as_ref().unwrap();
        report(3, "catastrophic forgetting", forgetting(c, *elapsed));
    }

    let mut online_five = None;
    if selected(4) || selected(5) {
        let repeats = if selected(4) {
            env_usize("FORGE_CL_ACCEPTANCE_REPEATS").unwrap_or(REPEATS)
        } else {
            1
        };
        let mut reps = Vec::with_capacity(repeats);
        for r in 0..repeats.max(1) {
            let shared = if r == 0 { baseline.as_ref().map(|(c, _)| c) } else { None };
            let (rep, campaign) = repetition(r as u64, shared);
            if r == 0 {
                online_five = Some(mean_worst(&campaign, StrategyKind::OnlineEwc).0);
            }
            if r < repeats {
                reps.push(rep);
            }
        }
        if selected(4) {
            report(4, "strategy ordering", ordering(&reps));
        }
    }
    if selected(5) {
        report(5, "eight-task degradation", eight_tasks(online_five.unwrap()));
    }
    if selected(6) {
        report(6, "permuted benchmark", permuted());
    }
    if selected(7) {
        report(7, "EWC freezing limit", freezing());
    }
    if selected(8) {
        report(8, "memory contract", memory());
    }
    if selected(9) {
        report(9, "data invariants", data_invariants());
    }

    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
