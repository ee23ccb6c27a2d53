//! Exact gradients by backpropagation through time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstm::{forward_traced, predicted_label, Activation, ClassProbs, ModelParams, StepCache};
use crate::pose::{Label, LabeledSequence};

/// Clamp applied to probabilities before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Gradient buffers, shaped exactly like the model.
pub type Gradients = ModelParams;

/// Categorical cross-entropy `-Σ y_k ln(max(p_k, 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: &[f64]) -> Result<f64> {
    if probs.len() != label.len() {
        return Err(Error::Dimension {
            context: "cross_entropy",
            expected: probs.len(),
            found: label.len(),
        });
    }
    let loss: f64 = probs
        .iter()
        .zip(label)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| -y * p.max(PROB_FLOOR).ln())
        .sum();
    // -0.0 for a perfect prediction
    Ok(loss + 0.0)
}

pub fn sample_loss(probs: &ClassProbs, label: Label) -> f64 {
    -probs[label.index()].max(PROB_FLOOR).ln()
}

#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grads: Gradients,
    pub mean_loss: f64,
    /// Samples whose argmax prediction matched the label.
    pub correct: usize,
}

/// Backward pass through one LSTM layer. `dh_above[t]` is the loss gradient
/// flowing into `h_t` from the layer above. Returns the gradient with respect
/// to the layer inputs when `want_dx` is set.
fn lstm_layer_backward(
    steps: &[StepCache],
    params: &crate::lstm::LstmLayerParams,
    grads: &mut crate::lstm::LstmLayerParams,
    dh_above: &[Vec<f64>],
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let hidden = params.hidden_size();
    let input = params.input_size();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dx = if want_dx {
        vec![Vec::new(); steps.len()]
    } else {
        Vec::new()
    };
    let mut da_i = vec![0.0; hidden];
    let mut da_f = vec![0.0; hidden];
    let mut da_o = vec![0.0; hidden];
    let mut da_c = vec![0.0; hidden];
    let mut dz = vec![0.0; hidden + input];

    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        for k in 0..hidden {
            let dh = dh_above[t][k] + dh_next[k];
            let d_o = dh * s.tanh_c[k];
            let dc = dc_next[k] + dh * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            let d_i = dc * s.g[k];
            let d_g = dc * s.i[k];
            let d_f = dc * s.c_prev[k];
            dc_next[k] = dc * s.f[k];
            da_i[k] = d_i * s.i[k] * (1.0 - s.i[k]);
            da_f[k] = d_f * s.f[k] * (1.0 - s.f[k]);
            da_o[k] = d_o * s.o[k] * (1.0 - s.o[k]);
            da_c[k] = d_g * (1.0 - s.g[k] * s.g[k]);
        }
        grads.w_i.add_outer(&da_i, &s.z);
        grads.w_f.add_outer(&da_f, &s.z);
        grads.w_o.add_outer(&da_o, &s.z);
        grads.w_c.add_outer(&da_c, &s.z);
        for k in 0..hidden {
            grads.b_i[k] += da_i[k];
            grads.b_f[k] += da_f[k];
            grads.b_o[k] += da_o[k];
            grads.b_c[k] += da_c[k];
        }
        dz.fill(0.0);
        // the first layer never needs d/dx, only d/dh_{t-1}
        let cols = if want_dx { hidden + input } else { hidden };
        let dz = &mut dz[..cols];
        params.w_i.add_transpose_mul_prefix(&da_i, dz);
        params.w_f.add_transpose_mul_prefix(&da_f, dz);
        params.w_o.add_transpose_mul_prefix(&da_o, dz);
        params.w_c.add_transpose_mul_prefix(&da_c, dz);
        dh_next.copy_from_slice(&dz[..hidden]);
        if want_dx {
            dx[t] = dz[hidden..].to_vec();
        }
    }
    dx
}

/// Loss and gradient of a single labeled sequence, accumulated into `grads`.
/// Returns `(loss, probs)`.
fn accumulate_sample(m: &ModelParams, sample: &LabeledSequence, grads: &mut Gradients) -> Result<(f64, ClassProbs)> {
    let trace = forward_traced(m, sample.window.frames())?;
    let probs = trace.probs;
    let y = sample.label.index();
    let loss = sample_loss(&probs, sample.label);

    // d loss / d logits = p - onehot, zero where the floor clamps the loss
    let mut delta: Vec<f64> = if probs[y] < PROB_FLOOR {
        vec![0.0; probs.len()]
    } else {
        let mut d = probs.to_vec();
        d[y] -= 1.0;
        d
    };

    for k in (0..m.dense_layers.len()).rev() {
        let layer = &m.dense_layers[k];
        let (input, pre, _) = &trace.dense[k];
        match layer.activation {
            Activation::Softmax | Activation::Identity => {}
            Activation::Relu => {
                for (d, &p) in delta.iter_mut().zip(pre) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        let g = &mut grads.dense_layers[k];
        g.w.add_outer(&delta, input);
        for (gb, d) in g.b.iter_mut().zip(&delta) {
            *gb += d;
        }
        let mut d_in = vec![0.0; layer.input_size()];
        layer.w.add_transpose_mul(&delta, &mut d_in);
        delta = d_in;
    }

    let steps_len = sample.window.len();
    let top_hidden = delta.len();
    let mut dh_above = vec![vec![0.0; top_hidden]; steps_len];
    dh_above[steps_len - 1] = delta;
    for l in (0..m.lstm_layers.len()).rev() {
        dh_above = lstm_layer_backward(
            &trace.lstm[l],
            &m.lstm_layers[l],
            &mut grads.lstm_layers[l],
            &dh_above,
            l > 0,
        );
    }
    Ok((loss, probs))
}

/// Mean loss and exact mean gradient over `batch`.
///
/// Per-sample gradients may be computed in parallel; they are summed in batch
/// order so the result does not depend on scheduling.
pub fn backward(m: &ModelParams, batch: &[LabeledSequence]) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let per_sample: Vec<Result<(Gradients, f64, bool)>> = batch
        .par_iter()
        .map(|s| {
            let mut g = m.zeros_like();
            let (loss, probs) = accumulate_sample(m, s, &mut g)?;
            Ok((g, loss, predicted_label(&probs) == s.label))
        })
        .collect();

    let n = batch.len() as f64;
    let mut total: Option<Gradients> = None;
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (i, r) in per_sample.into_iter().enumerate() {
        let (g, loss, hit) = r?;
        if !loss.is_finite() {
            return Err(Error::Numeric { epoch: None, sample: i });
        }
        loss_sum += loss;
        correct += usize::from(hit);
        match total.as_mut() {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.param_slices_mut().into_iter().zip(g.param_slices()) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = total.expect("non-empty batch");
    for s in grads.param_slices_mut() {
        for v in s.iter_mut() {
            *v /= n;
        }
    }
    Ok(BatchGradient {
        grads,
        mean_loss: loss_sum / n,
        correct,
    })
}
