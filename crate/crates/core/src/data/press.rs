//! Synthetic multi-pump hydraulic press data.
//!
//! Several pumps feed one shared oil reservoir, so the total pressure follows
//! the product's nominal press cycle. In an anomalous window one pump slowly
//! loses output while the remaining pumps work harder to compensate: the sum
//! over channels still tracks the nominal cycle and only the per-pump split
//! reveals the fault.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetMeta, TaskDataset};
use crate::engine::Tensor3;
use crate::error::{Error, Result};

/// Fixed input transform `(x - offset) / scale` that centres typical
/// per-pump readings near zero with unit spread.
pub const PRESS_INPUT_OFFSET: f64 = 0.6;
pub const PRESS_INPUT_SCALE: f64 = 0.4;

/// Noise draws are truncated at this many standard deviations.
pub const NOISE_CLIP_SIGMAS: f64 = 6.0;

/// How the degraded pump's shortfall develops over the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DegradationOnset {
    /// Shortfall grows linearly from zero at the first step to the full
    /// factor at the last step.
    Linear,
    /// Full shortfall from `at_fraction` of the window onwards.
    Step { at_fraction: f64 },
}

/// Waveform of one product's nominal press cycle (total over all pumps).
///
/// The cycle is trapezoidal: ramp up from idle to hold pressure, hold, ramp
/// down, then idle until the next cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductParams {
    /// Cycle length in timesteps.
    pub period: f64,
    /// Fraction of the cycle spent on each ramp; below 0.25.
    pub ramp_fraction: f64,
    /// Fraction of the cycle spent at hold pressure.
    pub hold_fraction: f64,
    /// Total pressure reached during the hold phase.
    pub hold_pressure: f64,
    /// Pressure swing between idle and hold; idle sits at
    /// `hold_pressure - amplitude`.
    pub amplitude: f64,
}

impl ProductParams {
    /// Draws a product uniformly from the catalog ranges for a window of
    /// `window_len` steps.
    pub fn random(rng: &mut impl Rng, window_len: usize) -> Self {
        let t = window_len as f64;
        let hold_pressure = rng.gen_range(4.0..12.0);
        Self {
            period: rng.gen_range(0.2 * t..0.7 * t),
            ramp_fraction: rng.gen_range(0.05..0.2),
            hold_fraction: rng.gen_range(0.2..0.45),
            hold_pressure,
            amplitude: hold_pressure * rng.gen_range(0.4..0.9),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.period >= 2.0
            && self.ramp_fraction > 0.0
            && self.ramp_fraction < 0.25
            && self.hold_fraction > 0.0
            && 2.0 * self.ramp_fraction + self.hold_fraction < 1.0
            && self.amplitude > 0.0
            && self.hold_pressure >= self.amplitude
            && [self.period, self.hold_pressure, self.amplitude]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("degenerate product parameters {self:?}")))
        }
    }

    /// Nominal total pressure at (possibly fractional) time `t`.
    pub fn nominal(&self, t: f64) -> f64 {
        let u = (t / self.period).rem_euclid(1.0);
        let r = self.ramp_fraction;
        let hold_end = r + self.hold_fraction;
        let shape = if u < r {
            u / r
        } else if u < hold_end {
            1.0
        } else if u < hold_end + r {
            1.0 - (u - hold_end) / r
        } else {
            0.0
        };
        self.hold_pressure - self.amplitude + self.amplitude * shape
    }
}

/// Parameters of the press generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressGenConfig {
    pub n_pumps: usize,
    pub window_len: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    /// Range of the final shortfall factor of a degraded pump, within (0, 1).
    pub degradation_range: [f64; 2],
    pub onset: DegradationOnset,
    /// Spread of the per-product nominal pump shares, in [0, 1). At 0 every
    /// pump carries `1/n_pumps` of the load; above it each product draws
    /// weights `1 + share_spread * u` with `u ~ U(-1, 1)`, normalized.
    pub share_spread: f64,
    /// Fixed product; drawn from the task seed when absent.
    pub product: Option<ProductParams>,
}

impl Default for PressGenConfig {
    fn default() -> Self {
        Self {
            n_pumps: 8,
            window_len: 375,
            samples_per_class: 400,
            noise_std: 0.1,
            degradation_range: [0.3, 0.7],
            onset: DegradationOnset::Linear,
            share_spread: 0.3,
            product: None,
        }
    }
}

impl PressGenConfig {
    /// Laptop-scale catalog matching [`ModelConfig::desk`](crate::engine::ModelConfig::desk).
    pub fn desk() -> Self {
        Self {
            window_len: 64,
            samples_per_class: 100,
            noise_std: 0.1,
            share_spread: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pumps < 2 {
            return Err(Error::Config("n_pumps must be at least 2".into()));
        }
        if self.window_len < 10 {
            return Err(Error::Config(format!(
                "window_len must be at least 10, got {}",
                self.window_len
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be nonnegative".into()));
        }
        let [lo, hi] = self.degradation_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "degradation_range [{lo}, {hi}] must lie within (0, 1)"
            )));
        }
        if !(0.0..1.0).contains(&self.share_spread) {
            return Err(Error::Config(format!(
                "share_spread must lie in [0, 1), got {}",
                self.share_spread
            )));
        }
        if let DegradationOnset::Step { at_fraction } = self.onset {
            if !(0.0..1.0).contains(&at_fraction) {
                return Err(Error::Config("step onset must lie in [0, 1)".into()));
            }
        }
        if let Some(p) = &self.product {
            p.validate()?;
        }
        Ok(())
    }

    /// Shortfall fraction of the degraded pump at step `t` for final factor
    /// `factor`.
    pub fn shortfall(&self, t: usize, factor: f64) -> f64 {
        match self.onset {
            DegradationOnset::Linear => factor * t as f64 / (self.window_len - 1) as f64,
            DegradationOnset::Step { at_fraction } => {
                if t as f64 >= at_fraction * self.window_len as f64 {
                    factor
                } else {
                    0.0
                }
            }
        }
    }

    /// Equal nominal shares, `1/n_pumps` each.
    pub fn equal_shares(&self) -> Vec<f64> {
        vec![1.0 / self.n_pumps as f64; self.n_pumps]
    }

    /// Nominal pump shares of one product.
    pub fn draw_shares(&self, rng: &mut impl Rng) -> Vec<f64> {
        if self.share_spread == 0.0 {
            return self.equal_shares();
        }
        let w: Vec<f64> = (0..self.n_pumps)
            .map(|_| 1.0 + self.share_spread * rng.gen_range(-1.0..1.0))
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    /// Closed interval every generated channel value lies in.
    pub fn value_range(&self, product: &ProductParams, shares: &[f64]) -> (f64, f64) {
        let hi_share = shares.iter().copied().fold(0.0, f64::max);
        let lo_share = shares.iter().copied().fold(1.0, f64::min);
        let share_max = product.hold_pressure * hi_share;
        let share_min = (product.hold_pressure - product.amplitude) * lo_share;
        let boost = 1.0 + self.degradation_range[1] * hi_share / (1.0 - hi_share);
        let noise = NOISE_CLIP_SIGMAS * self.noise_std;
        (
            share_min * (1.0 - self.degradation_range[1]) - noise,
            share_max * boost + noise,
        )
    }
}

/// One generated window before noise: per-pump values `[T, C]`.
///
/// A degraded pump's missing output is taken over by the others in
/// proportion to their shares, so the channel sum is unchanged.
pub fn pump_profile(
    cfg: &PressGenConfig,
    product: &ProductParams,
    shares: &[f64],
    phase: f64,
    fault: Option<(usize, f64)>,
) -> Vec<f64> {
    let n = cfg.n_pumps;
    let mut out = Vec::with_capacity(cfg.window_len * n);
    for t in 0..cfg.window_len {
        let total = product.nominal(t as f64 + phase);
        match fault {
            None => out.extend(shares.iter().map(|s| s * total)),
            Some((pump, factor)) => {
                let a = cfg.shortfall(t, factor);
                let lost = shares[pump];
                let boost = 1.0 + a * lost / (1.0 - lost);
                for (k, s) in shares.iter().enumerate() {
                    out.push(if k == pump { s * total * (1.0 - a) } else { s * total * boost });
                }
            }
        }
    }
    out
}

/// [`pump_profile`] plus i.i.d. Gaussian noise truncated at
/// [`NOISE_CLIP_SIGMAS`].
pub fn noisy_window(
    cfg: &PressGenConfig,
    product: &ProductParams,
    shares: &[f64],
    phase: f64,
    fault: Option<(usize, f64)>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let mut window = pump_profile(cfg, product, shares, phase, fault);
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        let clip = NOISE_CLIP_SIGMAS * cfg.noise_std;
        for v in &mut window {
            *v += noise.sample(rng).clamp(-clip, clip);
        }
    }
    Ok(window)
}

/// Generates one product's labeled windows: `samples_per_class` normal
/// windows followed by as many anomalous ones.
pub fn generate_press_task(cfg: &PressGenConfig, task_seed: u64) -> Result<TaskDataset> {
    generate_named(cfg, task_seed, format!("press-{task_seed}"))
}

fn generate_named(cfg: &PressGenConfig, task_seed: u64, task_id: String) -> Result<TaskDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
    let product = match cfg.product {
        Some(p) => p,
        None => ProductParams::random(&mut rng, cfg.window_len),
    };
    product.validate()?;
    let shares = cfg.draw_shares(&mut rng);

    let n = cfg.samples_per_class * 2;
    let sample_len = cfg.window_len * cfg.n_pumps;
    let mut data = Vec::with_capacity(n * sample_len);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let anomalous = i >= cfg.samples_per_class;
        let phase = rng.gen_range(0.0..product.period);
        let fault = anomalous.then(|| {
            let pump = rng.gen_range(0..cfg.n_pumps);
            let [lo, hi] = cfg.degradation_range;
            let factor = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            (pump, factor)
        });
        data.extend(noisy_window(cfg, &product, &shares, phase, fault, &mut rng)?);
        labels.push(u8::from(anomalous));
    }
    let inputs = Tensor3::new([n, cfg.window_len, cfg.n_pumps], data)?;
    TaskDataset::new(
        task_id,
        inputs,
        labels,
        DatasetMeta::Press {
            config: cfg.clone(),
            product,
            pump_shares: shares,
            task_seed,
        },
    )
}

/// Generates `n_products` tasks whose products are drawn deterministically
/// from `seed`.
pub fn generate_press_catalog(
    n_products: usize,
    cfg: &PressGenConfig,
    seed: u64,
) -> Result<Vec<TaskDataset>> {
    if n_products == 0 {
        return Err(Error::Config("catalog needs at least one product".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut products: Vec<ProductParams> = Vec::with_capacity(n_products);
    while products.len() < n_products {
        let candidate = ProductParams::random(&mut rng, cfg.window_len);
        if products.iter().all(|p| p.period != candidate.period) {
            products.push(candidate);
        }
    }
    products
        .into_iter()
        .enumerate()
        .map(|(i, product)| {
            let task_cfg = PressGenConfig {
                product: Some(product),
                ..cfg.clone()
            };
            let task_seed = rng.gen();
            generate_named(&task_cfg, task_seed, format!("press-{i:02}"))
        })
        .collect()
}
