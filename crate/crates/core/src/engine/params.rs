use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::optim::OptimizerKind;
use crate::error::{Error, Result};

/// Network shape and the optimizer settings shared by every strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Flattened window size; must equal `seq_len * channels`.
    pub input_dim: usize,
    pub seq_len: usize,
    pub channels: usize,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 3000,
            seq_len: 375,
            channels: 8,
            hidden_layers: 2,
            hidden_size: 200,
            output_dim: 2,
            learning_rate: 0.001,
            batch_size: 100,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl ModelConfig {
    /// Reduced dimensions for laptop-scale runs: 64 steps of 8 channels and
    /// 64 hidden units.
    pub fn desk() -> Self {
        Self {
            input_dim: 64 * 8,
            seq_len: 64,
            channels: 8,
            hidden_layers: 1,
            hidden_size: 64,
            output_dim: 2,
            learning_rate: 0.003,
            batch_size: 20,
            optimizer: OptimizerKind::Adam,
        }
    }

    /// Builds a config for `seq_len` steps of `channels` inputs, keeping the
    /// remaining fields at their defaults.
    pub fn with_window(seq_len: usize, channels: usize) -> Self {
        Self {
            input_dim: seq_len * channels,
            seq_len,
            channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("seq_len", self.seq_len),
            ("channels", self.channels),
            ("hidden_layers", self.hidden_layers),
            ("hidden_size", self.hidden_size),
            ("output_dim", self.output_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.seq_len * self.channels != self.input_dim {
            return Err(Error::Config(format!(
                "seq_len ({}) * channels ({}) != input_dim ({})",
                self.seq_len, self.channels, self.input_dim
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Input width of LSTM layer `layer`.
    pub fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.channels
        } else {
            self.hidden_size
        }
    }

    pub fn param_count(&self) -> usize {
        ParamLayout::new(self).len()
    }
}

/// One named block of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

/// Ordered segment map; offsets tile `0..len()` without gaps.
///
/// Each LSTM layer owns `lstm{l}.w_ih` `(4H, in)`, `lstm{l}.w_hh` `(4H, H)`
/// and `lstm{l}.bias` `(4H)`, gate rows stacked as input, forget, cell,
/// output. The dense readout owns `output.weight` `(K, H)` and `output.bias`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Self {
        let h = config.hidden_size;
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len = shape.iter().product();
            segments.push(Segment {
                name,
                offset,
                len,
                shape,
            });
            offset += len;
        };
        for layer in 0..config.hidden_layers {
            let input = config.layer_input(layer);
            push(format!("lstm{layer}.w_ih"), vec![4 * h, input]);
            push(format!("lstm{layer}.w_hh"), vec![4 * h, h]);
            push(format!("lstm{layer}.bias"), vec![4 * h]);
        }
        push("output.weight".into(), vec![config.output_dim, h]);
        push("output.bias".into(), vec![config.output_dim]);
        Self {
            segments,
            total: offset,
        }
    }

    /// Rebuilds a layout from serialized segments, checking that they tile.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut offset = 0;
        for seg in &segments {
            if seg.offset != offset || seg.shape.iter().product::<usize>() != seg.len {
                return Err(Error::Data(format!(
                    "segment {} does not tile the parameter vector",
                    seg.name
                )));
            }
            offset += seg.len;
        }
        Ok(Self {
            segments,
            total: offset,
        })
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    fn range(&self, name: &str) -> std::ops::Range<usize> {
        let seg = self
            .segment(name)
            .unwrap_or_else(|| panic!("unknown parameter segment {name}"));
        seg.offset..seg.offset + seg.len
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Flat trainable weights together with their segment map.
///
/// Every mutable borrow of the values stamps a fresh generation, which lets
/// backward passes detect traces recorded against older weights.
#[derive(Debug, Clone)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
    generation: u64,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.values == other.values
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
            generation: next_generation(),
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(layout.len(), values.len()));
        }
        Ok(Self {
            values,
            layout,
            generation: next_generation(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.generation = next_generation();
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self.layout.range(name);
        &mut self.values_mut()[range]
    }

    /// Errors unless `other` has the same segment map.
    pub fn check_congruent(&self, other: &ParamLayout) -> Result<()> {
        if *self.layout != *other {
            return Err(Error::StateCorruption(format!(
                "parameter layout mismatch ({} vs {} values)",
                self.layout.len(),
                other.len()
            )));
        }
        Ok(())
    }
}

/// `∂L/∂θ`, congruent with the `ParamVector` it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl Gradient {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(layout.len(), values.len()));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[self.layout.range(name)]
    }

    pub(crate) fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self.layout.range(name);
        &mut self.values[range]
    }

    /// Adds `other` elementwise.
    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        if *self.layout != *other.layout {
            return Err(Error::StateCorruption("gradient layout mismatch".into()));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Uniform `±1/√fan_in` weights per segment; LSTM forget-gate biases start at
/// 1.0 and every other bias at zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let layout = Arc::new(ParamLayout::new(config));
    let mut params = ParamVector::zeros(layout.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_size;
    let values = params.values_mut();
    for seg in layout.segments() {
        let slice = &mut values[seg.offset..seg.offset + seg.len];
        if seg.shape.len() == 2 {
            let bound = 1.0 / (seg.shape[1] as f64).sqrt();
            for v in slice.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        } else if seg.name.starts_with("lstm") {
            slice[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(params)
}
