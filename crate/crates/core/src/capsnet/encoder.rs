//! Gated recurrent unit with backpropagation through time.
//!
//! Gate rows are stacked `[update; reset; candidate]`:
//!
//! ```text
//! z  = σ(W_z x + U_z h + b_z)
//! r  = σ(W_r x + U_r h + b_r)
//! h~ = tanh(W_h x + U_h (r ⊙ h) + b_h)
//! h' = (1 − z) ⊙ h + z ⊙ h~
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::{axpy, dot, sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// `3H × In`
    pub w_in: Matrix,
    /// `3H × H`
    pub w_rec: Matrix,
    /// `1 × 3H`
    pub bias: Matrix,
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_in: Matrix::zeros(3 * hidden, input),
            w_rec: Matrix::zeros(3 * hidden, hidden),
            bias: Matrix::zeros(1, 3 * hidden),
        }
    }

    /// Uniform in `±1/√fan_in` for each weight matrix. Update-gate biases
    /// start at `update_bias`, all other biases at zero.
    pub fn init<R: Rng>(input: usize, hidden: usize, update_bias: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let a = 1.0 / (input as f64).sqrt();
        p.w_in
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-a..=a));
        let a = 1.0 / (hidden as f64).sqrt();
        p.w_rec
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-a..=a));
        p.bias.as_mut_slice()[..hidden].fill(update_bias);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_rec.cols()
    }

    pub fn input(&self) -> usize {
        self.w_in.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

/// Activations of one directional pass, in processing order.
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    steps: Vec<GruStep>,
    reverse: bool,
    /// Hidden state per time index (original order), `T × H`.
    pub outputs: Matrix,
}

impl GruTrace {
    /// The state after the last processed frame.
    pub fn final_state(&self) -> &[f64] {
        let t = if self.reverse {
            0
        } else {
            self.outputs.rows() - 1
        };
        self.outputs.row(t)
    }

    /// Time index of the final state.
    pub fn final_index(&self) -> usize {
        if self.reverse {
            0
        } else {
            self.outputs.rows() - 1
        }
    }
}

fn time_order(frames: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..frames).map(move |s| if reverse { frames - 1 - s } else { s })
}

/// Runs the GRU over the rows of `inputs`, back to front when `reverse`.
pub fn gru_forward(p: &GruParams, inputs: &Matrix, reverse: bool) -> GruTrace {
    let h_dim = p.hidden();
    let frames = inputs.rows();
    let mut outputs = Matrix::zeros(frames, h_dim);
    let mut steps = Vec::with_capacity(frames);
    let mut h = vec![0.0; h_dim];
    let bias = p.bias.as_slice();
    let mut pre = vec![0.0; 3 * h_dim];
    for t in time_order(frames, reverse) {
        pre.copy_from_slice(bias);
        p.w_in.matvec_into(inputs.row(t), &mut pre);
        let mut z = vec![0.0; h_dim];
        let mut r = vec![0.0; h_dim];
        for k in 0..h_dim {
            z[k] = sigmoid(pre[k] + dot(p.w_rec.row(k), &h));
            r[k] = sigmoid(pre[h_dim + k] + dot(p.w_rec.row(h_dim + k), &h));
        }
        let rh: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = (0..h_dim)
            .map(|k| (pre[2 * h_dim + k] + dot(p.w_rec.row(2 * h_dim + k), &rh)).tanh())
            .collect();
        let next: Vec<f64> = (0..h_dim)
            .map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k])
            .collect();
        outputs.row_mut(t).copy_from_slice(&next);
        steps.push(GruStep {
            h_prev: std::mem::replace(&mut h, next),
            z,
            r,
            cand,
        });
    }
    GruTrace {
        steps,
        reverse,
        outputs,
    }
}

/// Backpropagation through time. `grad_outputs` holds `dL/dh_t` per time
/// index; parameter gradients are accumulated into `grads` and `dL/dx_t` is
/// returned.
pub fn gru_backward(
    p: &GruParams,
    inputs: &Matrix,
    trace: &GruTrace,
    grad_outputs: &Matrix,
    grads: &mut GruParams,
) -> Matrix {
    let h_dim = p.hidden();
    let frames = inputs.rows();
    let mut grad_inputs = Matrix::zeros(frames, inputs.cols());
    let mut carry = vec![0.0; h_dim];
    let mut da = vec![0.0; 3 * h_dim];
    let order: Vec<usize> = time_order(frames, trace.reverse).collect();
    for (s, step) in trace.steps.iter().enumerate().rev() {
        let t = order[s];
        let dh: Vec<f64> = grad_outputs
            .row(t)
            .iter()
            .zip(&carry)
            .map(|(a, b)| a + b)
            .collect();
        let h = &step.h_prev;
        let mut dh_prev: Vec<f64> = (0..h_dim).map(|k| dh[k] * (1.0 - step.z[k])).collect();
        for k in 0..h_dim {
            let z = step.z[k];
            let c = step.cand[k];
            da[k] = dh[k] * (c - h[k]) * z * (1.0 - z);
            da[2 * h_dim + k] = dh[k] * z * (1.0 - c * c);
        }
        // Candidate path through U_h (r ⊙ h).
        let mut d_rh = vec![0.0; h_dim];
        for k in 0..h_dim {
            let g = da[2 * h_dim + k];
            if g != 0.0 {
                axpy(g, p.w_rec.row(2 * h_dim + k), &mut d_rh);
            }
        }
        for k in 0..h_dim {
            let r = step.r[k];
            da[h_dim + k] = d_rh[k] * h[k] * r * (1.0 - r);
            dh_prev[k] += d_rh[k] * r;
        }
        let rh: Vec<f64> = step.r.iter().zip(h).map(|(a, b)| a * b).collect();
        for (k, &g) in da[..2 * h_dim].iter().enumerate() {
            if g != 0.0 {
                axpy(g, p.w_rec.row(k), &mut dh_prev);
                axpy(g, h, grads.w_rec.row_mut(k));
            }
        }
        for k in 0..h_dim {
            let g = da[2 * h_dim + k];
            if g != 0.0 {
                axpy(g, &rh, grads.w_rec.row_mut(2 * h_dim + k));
            }
        }
        axpy(1.0, &da, grads.bias.as_mut_slice());
        grads.w_in.add_outer(&da, inputs.row(t));
        p.w_in.matvec_t_into(&da, grad_inputs.row_mut(t));
        carry = dh_prev;
    }
    grad_inputs
}
