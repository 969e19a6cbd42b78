//! One-hidden-layer perceptron: `softmax(W2ᵀ relu(W1ᵀx + b1) + b2)`, with
//! mean cross-entropy loss, backpropagation and Adam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VerificationLabel;

pub const CLASSES: usize = 3;

/// Weights stored row-major: `w1[i * hidden + j]` connects input `i` to
/// hidden unit `j`, `w2[j * 3 + c]` connects hidden `j` to class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        MlpParams {
            input_dim,
            hidden,
            w1: vec![0.0; input_dim * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * CLASSES],
            b2: vec![0.0; CLASSES],
        }
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let a1 = 1.0 / (input_dim as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..a1));
        let a2 = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..a2));
        p
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_consistent(&self) -> bool {
        self.input_dim > 0
            && self.hidden > 0
            && self.w1.len() == self.input_dim * self.hidden
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden * CLASSES
            && self.b2.len() == CLASSES
            && self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Config(format!(
                "feature dimension {} does not match model input {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        Ok(())
    }
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: [f64; CLASSES],
}

fn activations(x: &[f64], p: &MlpParams) -> Activations {
    let h = p.hidden;
    let mut pre = p.b1.clone();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &p.w1[i * h..(i + 1) * h];
        for (z, w) in pre.iter_mut().zip(row) {
            *z += xi * w;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
    let mut logits = [p.b2[0], p.b2[1], p.b2[2]];
    for (j, &hj) in hidden.iter().enumerate() {
        for (c, l) in logits.iter_mut().enumerate() {
            *l += hj * p.w2[j * CLASSES + c];
        }
    }
    Activations {
        pre,
        hidden,
        logits,
    }
}

fn log_sum_exp(logits: &[f64; CLASSES]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64; CLASSES]) -> [f64; CLASSES] {
    let lse = log_sum_exp(logits);
    logits.map(|l| (l - lse).exp())
}

/// Class probabilities in (SUPPORTS, REFUTES, NEI) order.
pub fn mlp_forward(x: &[f64], params: &MlpParams) -> Result<[f64; CLASSES]> {
    params.check_input(x)?;
    Ok(softmax(&activations(x, params).logits))
}

/// Mean negative log-likelihood of the gold labels and its gradient.
pub fn loss_and_grad(
    batch: &[(&[f64], VerificationLabel)],
    params: &MlpParams,
) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let h = params.hidden;
    let mut grads = MlpParams::zeros(params.input_dim, h);
    let mut loss = 0.0;
    let mut d_hidden = vec![0.0; h];
    for (x, label) in batch {
        params.check_input(x)?;
        let act = activations(x, params);
        let lse = log_sum_exp(&act.logits);
        let gold = label.index();
        loss += lse - act.logits[gold];

        let mut d_logits = act.logits.map(|l| (l - lse).exp());
        d_logits[gold] -= 1.0;

        for (g, d) in grads.b2.iter_mut().zip(&d_logits) {
            *g += d;
        }
        #[allow(clippy::needless_range_loop)]
        for j in 0..h {
            let w2_row = &params.w2[j * CLASSES..(j + 1) * CLASSES];
            let g2_row = &mut grads.w2[j * CLASSES..(j + 1) * CLASSES];
            let mut back = 0.0;
            for c in 0..CLASSES {
                g2_row[c] += act.hidden[j] * d_logits[c];
                back += w2_row[c] * d_logits[c];
            }
            d_hidden[j] = if act.pre[j] > 0.0 { back } else { 0.0 };
            grads.b1[j] += d_hidden[j];
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut grads.w1[i * h..(i + 1) * h];
            for (g, d) in row.iter_mut().zip(&d_hidden) {
                *g += xi * d;
            }
        }
    }
    let n = batch.len() as f64;
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|g| *g /= n);
    }
    Ok((loss / n, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: MlpParams::zeros(params.input_dim, params.hidden),
            v: MlpParams::zeros(params.input_dim, params.hidden),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    hp: &AdamHyper,
) {
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
    }
}

pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, hp: &AdamHyper) {
    state.step += 1;
    let t = state.step;
    let [pw1, pb1, pw2, pb2] = params.tensors_mut();
    let [mw1, mb1, mw2, mb2] = state.m.tensors_mut();
    let [vw1, vb1, vw2, vb2] = state.v.tensors_mut();
    let g = grads.tensors();
    adam_update(pw1, g[0], mw1, vw1, t, hp);
    adam_update(pb1, g[1], mb1, vb1, t, hp);
    adam_update(pw2, g[2], mw2, vw2, t, hp);
    adam_update(pb2, g[3], mb2, vb2, t, hp);
}
