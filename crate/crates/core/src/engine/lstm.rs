//! Stacked LSTM classifier: forward pass with cached activations and full
//! backpropagation through time.
//!
//! Activations are stored time-major (`[T, B, ·]`) so every per-layer weight
//! gradient is a single GEMM over all timesteps.

use crate::engine::linalg::{gemm, Strided};
use crate::engine::loss::loss_ce_with_grad;
use crate::engine::params::{Gradient, ModelConfig, ParamVector};
use crate::engine::tensor::{Matrix, Tensor3};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct LayerTrace {
    /// Activated gates `[T, B, 4H]` in order input, forget, cell, output.
    gates: Vec<f64>,
    /// Cell states `[T + 1, B, H]`; block 0 is the zero initial state.
    cells: Vec<f64>,
    /// Hidden states `[T + 1, B, H]`; block 0 is the zero initial state.
    hidden: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    generation: u64,
    batch: usize,
    /// Time-major copy of the batch `[T, B, C]`.
    inputs: Vec<f64>,
    layers: Vec<LayerTrace>,
    logits: Matrix,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Gate activations of `layer`, flattened `[T, B, 4H]`.
    pub fn gate_activations(&self, layer: usize) -> &[f64] {
        &self.layers[layer].gates
    }

    /// Cell states of `layer` after each step, flattened `[T, B, H]`.
    pub fn cell_states(&self, layer: usize, hidden: usize) -> &[f64] {
        &self.layers[layer].cells[self.batch * hidden..]
    }

    /// Hidden states of `layer` after each step, flattened `[T, B, H]`.
    pub fn hidden_states(&self, layer: usize, hidden: usize) -> &[f64] {
        &self.layers[layer].hidden[self.batch * hidden..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_batch(config: &ModelConfig, params: &ParamVector, batch: &Tensor3) -> Result<()> {
    let [b, t, c] = batch.shape();
    if t != config.seq_len || c != config.channels || b == 0 {
        return Err(Error::shape(
            format!("[B>0, {}, {}]", config.seq_len, config.channels),
            format!("[{b}, {t}, {c}]"),
        ));
    }
    if params.len() != config.param_count() {
        return Err(Error::shape(
            format!("{} parameters", config.param_count()),
            params.len(),
        ));
    }
    if let Some(pos) = batch.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite input value at flat index {pos}")));
    }
    Ok(())
}

/// Runs the network on `batch` (`[B, T, C]`) and returns the logits of the
/// final timestep's top hidden state, together with the cached trace.
pub fn forward(
    params: &ParamVector,
    config: &ModelConfig,
    batch: &Tensor3,
) -> Result<(Matrix, ForwardTrace)> {
    check_batch(config, params, batch)?;
    let [b, t_len, c] = batch.shape();
    let h = config.hidden_size;
    let g4 = 4 * h;

    let mut inputs = vec![0.0; t_len * b * c];
    for n in 0..b {
        let sample = batch.sample(n);
        for t in 0..t_len {
            inputs[(t * b + n) * c..(t * b + n + 1) * c]
                .copy_from_slice(&sample[t * c..(t + 1) * c]);
        }
    }

    let mut layers = Vec::with_capacity(config.hidden_layers);
    for layer in 0..config.hidden_layers {
        let in_dim = config.layer_input(layer);
        let x: &[f64] = if layer == 0 {
            &inputs
        } else {
            let prev: &LayerTrace = &layers[layer - 1];
            &prev.hidden[b * h..]
        };
        let w_ih = params.segment(&format!("lstm{layer}.w_ih"));
        let w_hh = params.segment(&format!("lstm{layer}.w_hh"));
        let bias = params.segment(&format!("lstm{layer}.bias"));

        let mut gates = vec![0.0; t_len * b * g4];
        gemm(
            t_len * b,
            in_dim,
            g4,
            1.0,
            Strided::rows(x, in_dim),
            Strided::transposed(w_ih, in_dim),
            0.0,
            &mut gates,
        );
        for row in gates.chunks_exact_mut(g4) {
            for (z, &bb) in row.iter_mut().zip(bias) {
                *z += bb;
            }
        }

        let mut cells = vec![0.0; (t_len + 1) * b * h];
        let mut hidden = vec![0.0; (t_len + 1) * b * h];
        for t in 0..t_len {
            let z = &mut gates[t * b * g4..(t + 1) * b * g4];
            if t > 0 {
                gemm(
                    b,
                    h,
                    g4,
                    1.0,
                    Strided::rows(&hidden[t * b * h..(t + 1) * b * h], h),
                    Strided::transposed(w_hh, h),
                    1.0,
                    z,
                );
            }
            let (c_prev_all, c_next_all) = cells.split_at_mut((t + 1) * b * h);
            let c_prev = &c_prev_all[t * b * h..];
            let c_next = &mut c_next_all[..b * h];
            let h_next = &mut hidden[(t + 1) * b * h..(t + 2) * b * h];
            for n in 0..b {
                let zr = &mut z[n * g4..(n + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(zr[j]);
                    let f = sigmoid(zr[h + j]);
                    let g = zr[2 * h + j].tanh();
                    let o = sigmoid(zr[3 * h + j]);
                    zr[j] = i;
                    zr[h + j] = f;
                    zr[2 * h + j] = g;
                    zr[3 * h + j] = o;
                    let cell = f * c_prev[n * h + j] + i * g;
                    c_next[n * h + j] = cell;
                    h_next[n * h + j] = o * cell.tanh();
                }
            }
        }
        layers.push(LayerTrace {
            gates,
            cells,
            hidden,
        });
    }

    let top = &layers[config.hidden_layers - 1].hidden[t_len * b * h..];
    let k = config.output_dim;
    let mut logits = Matrix::zeros(b, k);
    gemm(
        b,
        h,
        k,
        1.0,
        Strided::rows(top, h),
        Strided::transposed(params.segment("output.weight"), h),
        0.0,
        &mut logits.data,
    );
    let out_bias = params.segment("output.bias");
    for r in 0..b {
        for (v, &bb) in logits.row_mut(r).iter_mut().zip(out_bias) {
            *v += bb;
        }
    }
    if logits.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite logits".into()));
    }

    let trace = ForwardTrace {
        generation: params.generation(),
        batch: b,
        inputs,
        layers,
        logits: logits.clone(),
    };
    Ok((logits, trace))
}

/// Logits only; the trace is dropped.
pub fn predict(params: &ParamVector, config: &ModelConfig, batch: &Tensor3) -> Result<Matrix> {
    forward(params, config, batch).map(|(logits, _)| logits)
}

/// Backpropagates an arbitrary upstream gradient on the logits through the
/// whole network.
pub fn backward_from_logits(
    trace: &ForwardTrace,
    params: &ParamVector,
    config: &ModelConfig,
    dlogits: &Matrix,
) -> Result<Gradient> {
    if trace.generation != params.generation() {
        return Err(Error::Usage(
            "forward trace is stale: parameters changed since the forward pass".into(),
        ));
    }
    let b = trace.batch;
    if dlogits.rows != b || dlogits.cols != config.output_dim {
        return Err(Error::shape(
            format!("{}x{}", b, config.output_dim),
            format!("{}x{}", dlogits.rows, dlogits.cols),
        ));
    }
    let h = config.hidden_size;
    let g4 = 4 * h;
    let k = config.output_dim;
    let t_len = config.seq_len;
    let n_layers = config.hidden_layers;
    let mut grad = Gradient::zeros(params.layout().clone());

    let top_final = &trace.layers[n_layers - 1].hidden[t_len * b * h..];
    gemm(
        k,
        b,
        h,
        1.0,
        Strided::transposed(&dlogits.data, k),
        Strided::rows(top_final, h),
        0.0,
        grad.segment_mut("output.weight"),
    );
    {
        let db = grad.segment_mut("output.bias");
        for r in 0..b {
            for (acc, &v) in db.iter_mut().zip(dlogits.row(r)) {
                *acc += v;
            }
        }
    }

    // upstream gradient into each layer's hidden states, [T, B, H]
    let mut dh_in = vec![0.0; t_len * b * h];
    gemm(
        b,
        k,
        h,
        1.0,
        Strided::rows(&dlogits.data, k),
        Strided::rows(params.segment("output.weight"), h),
        0.0,
        &mut dh_in[(t_len - 1) * b * h..],
    );

    let mut dz = vec![0.0; t_len * b * g4];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    for layer in (0..n_layers).rev() {
        let lt = &trace.layers[layer];
        let in_dim = config.layer_input(layer);
        let w_ih = params.segment(&format!("lstm{layer}.w_ih"));
        let w_hh = params.segment(&format!("lstm{layer}.w_hh"));
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);

        for t in (0..t_len).rev() {
            let gates = &lt.gates[t * b * g4..(t + 1) * b * g4];
            let c_prev = &lt.cells[t * b * h..(t + 1) * b * h];
            let c_cur = &lt.cells[(t + 1) * b * h..(t + 2) * b * h];
            let dh_ext = &dh_in[t * b * h..(t + 1) * b * h];
            let dz_t = &mut dz[t * b * g4..(t + 1) * b * g4];
            for n in 0..b {
                let gr = &gates[n * g4..(n + 1) * g4];
                let dzr = &mut dz_t[n * g4..(n + 1) * g4];
                for j in 0..h {
                    let idx = n * h + j;
                    let (i, f, g, o) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let tc = c_cur[idx].tanh();
                    let dh = dh_ext[idx] + dh_next[idx];
                    let dc = dc_next[idx] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * g * i * (1.0 - i);
                    dzr[h + j] = dc * c_prev[idx] * f * (1.0 - f);
                    dzr[2 * h + j] = dc * i * (1.0 - g * g);
                    dzr[3 * h + j] = dh * tc * o * (1.0 - o);
                    dc_next[idx] = dc * f;
                }
            }
            gemm(
                b,
                g4,
                h,
                1.0,
                Strided::rows(dz_t, g4),
                Strided::rows(w_hh, h),
                0.0,
                &mut dh_next,
            );
        }

        let x: &[f64] = if layer == 0 {
            &trace.inputs
        } else {
            &trace.layers[layer - 1].hidden[b * h..]
        };
        gemm(
            g4,
            t_len * b,
            in_dim,
            1.0,
            Strided::transposed(&dz, g4),
            Strided::rows(x, in_dim),
            0.0,
            grad.segment_mut(&format!("lstm{layer}.w_ih")),
        );
        gemm(
            g4,
            t_len * b,
            h,
            1.0,
            Strided::transposed(&dz, g4),
            Strided::rows(&lt.hidden[..t_len * b * h], h),
            0.0,
            grad.segment_mut(&format!("lstm{layer}.w_hh")),
        );
        {
            let db = grad.segment_mut(&format!("lstm{layer}.bias"));
            for row in dz.chunks_exact(g4) {
                for (acc, &v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        if layer > 0 {
            gemm(
                t_len * b,
                g4,
                in_dim,
                1.0,
                Strided::rows(&dz, g4),
                Strided::rows(w_ih, in_dim),
                0.0,
                &mut dh_in,
            );
        }
    }
    Ok(grad)
}

/// Gradient of the mean cross-entropy of the traced batch, plus an optional
/// additive term (penalty gradients) folded in afterwards.
pub fn backward(
    trace: &ForwardTrace,
    params: &ParamVector,
    config: &ModelConfig,
    labels: &[usize],
    extra_loss_grad: Option<&Gradient>,
) -> Result<Gradient> {
    let (_, dlogits) = loss_ce_with_grad(&trace.logits, labels)?;
    let mut grad = backward_from_logits(trace, params, config, &dlogits)?;
    if let Some(extra) = extra_loss_grad {
        grad.add_assign(extra)?;
    }
    Ok(grad)
}

/// Mean cross-entropy of a batch and its gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    config: &ModelConfig,
    batch: &Tensor3,
    labels: &[usize],
) -> Result<(f64, Gradient)> {
    let (logits, trace) = forward(params, config, batch)?;
    let (loss, dlogits) = loss_ce_with_grad(&logits, labels)?;
    let grad = backward_from_logits(&trace, params, config, &dlogits)?;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::params::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            hidden_size: 4,
            hidden_layers: 1,
            ..ModelConfig::with_window(3, 2)
        }
    }

    fn random_batch(b: usize, config: &ModelConfig, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [b, config.seq_len, config.channels];
        let data = (0..b * config.input_dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        Tensor3::new(shape, data).unwrap()
    }

    /// Scalar re-implementation of one LSTM layer plus readout, written from
    /// the gate equations without any of the batched machinery.
    fn hand_stepped(params: &ParamVector, config: &ModelConfig, sample: &[f64]) -> Vec<f64> {
        let h = config.hidden_size;
        let c_in = config.channels;
        let w_ih = params.segment("lstm0.w_ih");
        let w_hh = params.segment("lstm0.w_hh");
        let bias = params.segment("lstm0.bias");
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        for t in 0..config.seq_len {
            let x = &sample[t * c_in..(t + 1) * c_in];
            let mut pre = vec![0.0; 4 * h];
            for (r, p) in pre.iter_mut().enumerate() {
                *p = bias[r];
                for q in 0..c_in {
                    *p += w_ih[r * c_in + q] * x[q];
                }
                for q in 0..h {
                    *p += w_hh[r * h + q] * hs[q];
                }
            }
            for j in 0..h {
                let i = sig(pre[j]);
                let f = sig(pre[h + j]);
                let g = pre[2 * h + j].tanh();
                let o = sig(pre[3 * h + j]);
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
        }
        let w = params.segment("output.weight");
        let bo = params.segment("output.bias");
        (0..config.output_dim)
            .map(|k| bo[k] + (0..h).map(|j| w[k * h + j] * hs[j]).sum::<f64>())
            .collect()
    }

    #[test]
    fn matches_hand_stepped_recurrence() {
        let config = small_config();
        let params = init_params(&config, 11).unwrap();
        let batch = random_batch(3, &config, 5);
        let logits = predict(&params, &config, &batch).unwrap();
        for n in 0..3 {
            let expected = hand_stepped(&params, &config, batch.sample(n));
            for (a, e) in logits.row(n).iter().zip(&expected) {
                assert!((a - e).abs() < 1e-14, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let config = small_config();
        let mut params = init_params(&config, 1).unwrap();
        params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let logits = predict(&params, &config, &random_batch(4, &config, 2)).unwrap();
        assert!(logits.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_are_identical() {
        let config = ModelConfig {
            hidden_layers: 2,
            ..small_config()
        };
        let params = init_params(&config, 3).unwrap();
        let one = random_batch(1, &config, 9);
        let two = one.gather(&[0, 0]);
        let logits = predict(&params, &config, &two).unwrap();
        assert_eq!(logits.row(0), logits.row(1));
        let single = predict(&params, &config, &one).unwrap();
        assert_eq!(single.row(0), logits.row(0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let config = ModelConfig {
            hidden_layers: 2,
            ..small_config()
        };
        let params = init_params(&config, 3).unwrap();
        let batch = random_batch(5, &config, 1);
        assert_eq!(
            predict(&params, &config, &batch).unwrap(),
            predict(&params, &config, &batch).unwrap()
        );
    }

    #[test]
    fn gate_ranges_hold() {
        let config = ModelConfig {
            hidden_layers: 2,
            ..small_config()
        };
        let params = init_params(&config, 3).unwrap();
        let mut batch = random_batch(4, &config, 1);
        batch.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        let (_, trace) = forward(&params, &config, &batch).unwrap();
        let h = config.hidden_size;
        for layer in 0..2 {
            for row in trace.gate_activations(layer).chunks_exact(4 * h) {
                for (j, &v) in row.iter().enumerate() {
                    if (2 * h..3 * h).contains(&j) {
                        assert!(v > -1.0 && v < 1.0);
                    } else {
                        assert!(v > 0.0 && v < 1.0);
                    }
                }
            }
            assert!(trace
                .hidden_states(layer, h)
                .iter()
                .all(|v| *v > -1.0 && *v < 1.0));
        }
    }

    #[test]
    fn shape_and_data_errors() {
        let config = small_config();
        let params = init_params(&config, 3).unwrap();
        let wrong = Tensor3::zeros([2, 4, 2]);
        assert!(matches!(
            forward(&params, &config, &wrong),
            Err(Error::Shape { .. })
        ));
        let mut bad = random_batch(2, &config, 1);
        bad.data_mut()[3] = f64::NAN;
        assert!(matches!(forward(&params, &config, &bad), Err(Error::Data(_))));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let config = small_config();
        let mut params = init_params(&config, 3).unwrap();
        let batch = random_batch(2, &config, 1);
        let (_, trace) = forward(&params, &config, &batch).unwrap();
        params.values_mut()[0] += 0.1;
        assert!(matches!(
            backward(&trace, &params, &config, &[0, 1], None),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_extra_gradient_is_additive_identity() {
        let config = small_config();
        let params = init_params(&config, 3).unwrap();
        let batch = random_batch(2, &config, 1);
        let (_, trace) = forward(&params, &config, &batch).unwrap();
        let plain = backward(&trace, &params, &config, &[0, 1], None).unwrap();
        let zeros = Gradient::zeros(params.layout().clone());
        let with = backward(&trace, &params, &config, &[0, 1], Some(&zeros)).unwrap();
        assert_eq!(plain, with);
    }
}
