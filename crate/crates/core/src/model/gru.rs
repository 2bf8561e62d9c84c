//! GRU recurrence, classifier head and backpropagation through time.
//!
//! Cell convention (initial state zero):
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! ĥ  = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 - z) ⊙ h + z ⊙ ĥ
//! ```

use super::{GateOffsets, LayerOffsets, ModelParams};
use crate::error::{Error, Result};
use crate::exec::{pairwise_sum, Exec};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out += W x` with `W` row-major `rows × cols`.
fn matvec_acc(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ v`.
fn matvec_t_acc(w: &[f64], cols: usize, v: &[f64], out: &mut [f64]) {
    for (vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `g += a bᵀ`.
fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    for (row, ai) in g.chunks_exact_mut(b.len()).zip(a) {
        for (gij, bj) in row.iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

fn gate_preactivation(
    p: &[f64],
    gate: GateOffsets,
    hidden: usize,
    input_dim: usize,
    x: &[f64],
    h: &[f64],
) -> Vec<f64> {
    let mut a = p[gate.b..gate.b + hidden].to_vec();
    matvec_acc(&p[gate.w..gate.w + hidden * input_dim], input_dim, x, &mut a);
    matvec_acc(&p[gate.u..gate.u + hidden * hidden], hidden, h, &mut a);
    a
}

fn layer_step(p: &[f64], lo: &LayerOffsets, hidden: usize, x: &[f64], h: &[f64]) -> StepCache {
    let d = lo.input_dim;
    let z: Vec<f64> = gate_preactivation(p, lo.update, hidden, d, x, h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = gate_preactivation(p, lo.reset, hidden, d, x, h)
        .into_iter()
        .map(sigmoid)
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let c: Vec<f64> = gate_preactivation(p, lo.candidate, hidden, d, x, &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h.to_vec(),
        z,
        r,
        c,
    }
}

impl StepCache {
    fn output(&self) -> Vec<f64> {
        (0..self.z.len())
            .map(|i| (1.0 - self.z[i]) * self.h_prev[i] + self.z[i] * self.c[i])
            .collect()
    }
}

/// Hidden states of every layer at every step, and the classifier logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `hidden_states[layer][step]`.
    pub hidden_states: Vec<Vec<Vec<f64>>>,
    pub logits: Vec<f64>,
}

fn check_input(params: &ModelParams, input: &[f64]) -> Result<()> {
    let cfg = params.config();
    if input.len() != cfg.seq_len * cfg.input_dim {
        return Err(Error::Contract(format!(
            "input has {} values, model expects {} steps of {}",
            input.len(),
            cfg.seq_len,
            cfg.input_dim
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("non-finite model input".into()));
    }
    Ok(())
}

fn forward_cached(params: &ModelParams, input: &[f64]) -> (Vec<Vec<StepCache>>, Vec<f64>) {
    let cfg = params.config();
    let h = cfg.hidden_dim;
    let p = params.values();
    let mut layer_input: Vec<Vec<f64>> = input.chunks_exact(cfg.input_dim).map(<[f64]>::to_vec).collect();
    let mut caches = Vec::with_capacity(cfg.num_gru_layers);
    for layer in 0..cfg.num_gru_layers {
        let lo = params.layout().layer(layer);
        let mut state = vec![0.0; h];
        let mut steps = Vec::with_capacity(cfg.seq_len);
        let mut outputs = Vec::with_capacity(cfg.seq_len);
        for x in &layer_input {
            let step = layer_step(p, &lo, h, x, &state);
            state = step.output();
            outputs.push(state.clone());
            steps.push(step);
        }
        caches.push(steps);
        layer_input = outputs;
    }
    let last = layer_input.last().expect("seq_len is positive");
    let (w, b) = params.layout().classifier();
    let mut logits = p[b..b + cfg.num_classes].to_vec();
    matvec_acc(&p[w..w + cfg.num_classes * h], h, last, &mut logits);
    (caches, logits)
}

/// Runs the stacked GRU over `input` (`seq_len × input_dim`, row-major).
pub fn gru_forward(params: &ModelParams, input: &[f64]) -> Result<ForwardOutput> {
    check_input(params, input)?;
    let (caches, logits) = forward_cached(params, input);
    let hidden_states = caches
        .iter()
        .map(|steps| steps.iter().map(StepCache::output).collect())
        .collect();
    Ok(ForwardOutput {
        hidden_states,
        logits,
    })
}

/// `log Σ exp(logits) - logits[label]`.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Loss of one sample; its full parameter gradient (unscaled) is added to
/// `grad`.
fn sample_gradient(params: &ModelParams, input: &[f64], label: usize, grad: &mut [f64]) -> f64 {
    let cfg = params.config();
    let h = cfg.hidden_dim;
    let p = params.values();
    let layout = params.layout();
    let (caches, logits) = forward_cached(params, input);
    let loss = cross_entropy(&logits, label);

    let mut dlogits = softmax(&logits);
    dlogits[label] -= 1.0;
    let top = caches.last().expect("at least one layer");
    let last_hidden = top.last().expect("seq_len is positive").output();
    let (w, b) = layout.classifier();
    let q = cfg.num_classes;
    outer_acc(&mut grad[w..w + q * h], &dlogits, &last_hidden);
    for (g, d) in grad[b..b + q].iter_mut().zip(&dlogits) {
        *g += d;
    }
    // gradient flowing into each step's output of the current layer
    let mut upstream = vec![vec![0.0; h]; cfg.seq_len];
    let mut last = vec![0.0; h];
    matvec_t_acc(&p[w..w + q * h], h, &dlogits, &mut last);
    upstream[cfg.seq_len - 1] = last;

    for layer in (0..cfg.num_gru_layers).rev() {
        let lo = layout.layer(layer);
        let d_in = lo.input_dim;
        let mut below = vec![vec![0.0; d_in]; cfg.seq_len];
        let mut dh_next = vec![0.0; h];
        for t in (0..cfg.seq_len).rev() {
            let s = &caches[layer][t];
            let dh: Vec<f64> = upstream[t].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let mut da_z = vec![0.0; h];
            let mut da_c = vec![0.0; h];
            for i in 0..h {
                da_z[i] = dh[i] * (s.c[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]);
                da_c[i] = dh[i] * s.z[i] * (1.0 - s.c[i] * s.c[i]);
            }
            let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();
            let mut drh = vec![0.0; h];
            matvec_t_acc(&p[lo.candidate.u..lo.candidate.u + h * h], h, &da_c, &mut drh);
            let da_r: Vec<f64> = (0..h)
                .map(|i| drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
                .collect();

            for (gate, da, recur) in [
                (lo.update, &da_z, &s.h_prev),
                (lo.reset, &da_r, &s.h_prev),
                (lo.candidate, &da_c, &rh),
            ] {
                outer_acc(&mut grad[gate.w..gate.w + h * d_in], da, &s.x);
                outer_acc(&mut grad[gate.u..gate.u + h * h], da, recur);
                for (g, d) in grad[gate.b..gate.b + h].iter_mut().zip(da) {
                    *g += d;
                }
            }

            let mut dh_prev: Vec<f64> = (0..h)
                .map(|i| dh[i] * (1.0 - s.z[i]) + drh[i] * s.r[i])
                .collect();
            matvec_t_acc(&p[lo.update.u..lo.update.u + h * h], h, &da_z, &mut dh_prev);
            matvec_t_acc(&p[lo.reset.u..lo.reset.u + h * h], h, &da_r, &mut dh_prev);
            dh_next = dh_prev;

            if layer > 0 {
                let dx = &mut below[t];
                for (gate, da) in [(lo.update, &da_z), (lo.reset, &da_r), (lo.candidate, &da_c)] {
                    matvec_t_acc(&p[gate.w..gate.w + h * d_in], d_in, da, dx);
                }
            }
        }
        upstream = below;
    }
    loss
}

// Samples per gradient accumulator. Fixed, so the summation order does not
// depend on the thread count.
const GRAD_CHUNK: usize = 8;

/// Mean cross-entropy over the batch and its gradient with respect to every
/// parameter (same layout as [`ModelParams::values`]).
pub fn loss_and_gradients(
    params: &ModelParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    loss_and_gradients_with(Exec::default(), params, inputs, labels)
}

/// As [`loss_and_gradients`]. Fixed-size chunks of the batch are processed
/// under `exec`, each accumulating its samples' gradients in order; the chunk
/// sums are then added in chunk order.
pub fn loss_and_gradients_with(
    exec: Exec,
    params: &ModelParams,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    if inputs.len() != labels.len() || inputs.is_empty() {
        return Err(Error::Contract(format!(
            "batch of {} inputs and {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let q = params.config().num_classes;
    if let Some(&bad) = labels.iter().find(|&&y| y >= q) {
        return Err(Error::Contract(format!("label {bad} outside {q} classes")));
    }
    for x in inputs {
        check_input(params, x)?;
    }
    let n_params = params.values().len();
    let chunks = exec.map_range(inputs.len().div_ceil(GRAD_CHUNK), |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(inputs.len());
        let mut grad = vec![0.0; n_params];
        let losses: Vec<f64> = (lo..hi)
            .map(|n| sample_gradient(params, &inputs[n], labels[n], &mut grad))
            .collect();
        (losses, grad)
    });
    let scale = 1.0 / inputs.len() as f64;
    let losses: Vec<f64> = chunks.iter().flat_map(|(l, _)| l.iter().copied()).collect();
    let loss = pairwise_sum(&losses) * scale;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite training loss ({loss}); check learning rate and inputs"
        )));
    }
    let mut chunks = chunks.into_iter();
    let (_, mut grad) = chunks.next().expect("batch is non-empty");
    for (_, g) in chunks {
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    for g in &mut grad {
        *g *= scale;
    }
    Ok((loss, grad))
}
