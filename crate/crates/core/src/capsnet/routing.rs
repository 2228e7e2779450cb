//! Squash nonlinearity, capsule predictions `û_{j|i} = W_ij u_i`, and
//! routing by agreement, each with its backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, norm, softmax_backward, softmax_unchecked, Matrix};

/// Guard for norms appearing in denominators.
pub const NORM_EPS: f64 = 1e-12;

/// `squash(s) = ‖s‖²/(1+‖s‖²) · s/‖s‖`, computed as `s · ‖s‖/(1+‖s‖²)` so
/// that `s = 0` maps to exactly zero.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let a = norm(s);
    let g = a / (1.0 + a * a);
    s.iter().map(|x| x * g).collect()
}

/// Vector-Jacobian product of [`squash`].
pub fn squash_backward(s: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let a = norm(s);
    if a < NORM_EPS {
        // squash is O(‖s‖²) around the origin.
        return vec![0.0; s.len()];
    }
    let denom = 1.0 + a * a;
    let g = a / denom;
    // g'(a) / a
    let radial = (1.0 - a * a) / (denom * denom) / a;
    let proj = dot(s, grad_out);
    s.iter()
        .zip(grad_out)
        .map(|(si, gi)| g * gi + radial * proj * si)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimaryCapsuleSet {
    /// `P × d_p`, one capsule per row.
    pub vectors: Matrix,
}

/// The `P × K` grid of transformation matrices, each `n × d_p`, so that
/// `û_{j|i} = W_ij u_i` maps a primary capsule to an output-capsule prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMatrices {
    pub num_in: usize,
    pub num_out: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub data: Vec<f64>,
}

impl TransformMatrices {
    pub fn zeros(num_in: usize, num_out: usize, out_dim: usize, in_dim: usize) -> Self {
        TransformMatrices {
            num_in,
            num_out,
            out_dim,
            in_dim,
            data: vec![0.0; num_in * num_out * out_dim * in_dim],
        }
    }

    fn block(&self) -> usize {
        self.out_dim * self.in_dim
    }

    /// Row-major `n × d_p` matrix for the pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let b = self.block();
        let start = (i * self.num_out + j) * b;
        &self.data[start..start + b]
    }

    pub fn pair_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let b = self.block();
        let start = (i * self.num_out + j) * b;
        &mut self.data[start..start + b]
    }

    pub fn set_pair(&mut self, i: usize, j: usize, m: &Matrix) {
        assert_eq!(m.shape(), (self.out_dim, self.in_dim));
        self.pair_mut(i, j).copy_from_slice(m.as_slice());
    }
}

/// Predictions `û_{j|i}`, laid out as `P × K × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTensor {
    pub num_in: usize,
    pub num_out: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PredictionTensor {
    pub fn zeros(num_in: usize, num_out: usize, dim: usize) -> Self {
        PredictionTensor {
            num_in,
            num_out,
            dim,
            data: vec![0.0; num_in * num_out * dim],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let s = (i * self.num_out + j) * self.dim;
        &self.data[s..s + self.dim]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let s = (i * self.num_out + j) * self.dim;
        &mut self.data[s..s + self.dim]
    }
}

pub fn predict_capsules(u: &PrimaryCapsuleSet, w: &TransformMatrices) -> Result<PredictionTensor> {
    let (p, d_p) = u.vectors.shape();
    if p != w.num_in || d_p != w.in_dim {
        return Err(Error::Shape(format!(
            "primary capsules are {p}x{d_p} but transforms expect {}x{}",
            w.num_in, w.in_dim
        )));
    }
    let mut out = PredictionTensor::zeros(p, w.num_out, w.out_dim);
    for i in 0..p {
        let ui = u.vectors.row(i);
        for j in 0..w.num_out {
            let m = w.pair(i, j);
            let dst = out.get_mut(i, j);
            for (a, d) in dst.iter_mut().enumerate() {
                *d = dot(&m[a * d_p..(a + 1) * d_p], ui);
            }
        }
    }
    Ok(out)
}

/// Given `dL/dû`, accumulates `dL/dW` into `grad_w` and returns `dL/du`.
pub fn predict_capsules_backward(
    u: &PrimaryCapsuleSet,
    w: &TransformMatrices,
    grad_pred: &PredictionTensor,
    grad_w: &mut TransformMatrices,
) -> Matrix {
    let (p, d_p) = u.vectors.shape();
    let mut grad_u = Matrix::zeros(p, d_p);
    for i in 0..p {
        let ui = u.vectors.row(i);
        for j in 0..w.num_out {
            let g = grad_pred.get(i, j);
            let m = w.pair(i, j);
            let gm = grad_w.pair_mut(i, j);
            let gu = grad_u.row_mut(i);
            for (a, &ga) in g.iter().enumerate() {
                if ga != 0.0 {
                    axpy(ga, ui, &mut gm[a * d_p..(a + 1) * d_p]);
                    axpy(ga, &m[a * d_p..(a + 1) * d_p], gu);
                }
            }
        }
    }
    grad_u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputCapsuleSet {
    /// `K × n`, one capsule per row.
    pub vectors: Matrix,
    pub norms: Vec<f64>,
}

impl OutputCapsuleSet {
    pub fn new(vectors: Matrix) -> Self {
        let norms = (0..vectors.rows()).map(|k| norm(vectors.row(k))).collect();
        OutputCapsuleSet { vectors, norms }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    /// Logits `b`, `P × K`.
    pub logits: Matrix,
    /// Coupling coefficients `c = softmax_j(b)`, `P × K`.
    pub coefficients: Matrix,
}

/// Per-iteration routing intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingIteration {
    pub coefficients: Matrix,
    /// Weighted sums `s_j`, `K × n`.
    pub sums: Matrix,
    /// Squashed outputs `v_j`, `K × n`.
    pub outputs: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTrace {
    pub iterations: Vec<RoutingIteration>,
    pub final_state: RoutingState,
}

/// Routing by agreement.
///
/// `b ← 0`; each iteration computes `c = softmax_j(b)`, `s_j = Σ_i c_ij û_{j|i}`,
/// `v_j = squash(s_j)` and, except after the last iteration,
/// `b_ij += û_{j|i} · v_j`.
pub fn dynamic_routing(
    pred: &PredictionTensor,
    iterations: usize,
) -> (OutputCapsuleSet, RoutingState) {
    let trace = dynamic_routing_traced(pred, iterations);
    let v = trace
        .iterations
        .last()
        .expect("at least one iteration")
        .outputs
        .clone();
    (OutputCapsuleSet::new(v), trace.final_state)
}

pub fn dynamic_routing_traced(pred: &PredictionTensor, iterations: usize) -> RoutingTrace {
    assert!(iterations >= 1, "routing needs at least one iteration");
    let (p, k, n) = (pred.num_in, pred.num_out, pred.dim);
    let mut logits = Matrix::zeros(p, k);
    let mut trace = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let mut c = Matrix::zeros(p, k);
        for i in 0..p {
            c.row_mut(i)
                .copy_from_slice(&softmax_unchecked(logits.row(i)));
        }
        let mut sums = Matrix::zeros(k, n);
        for i in 0..p {
            for j in 0..k {
                axpy(c.get(i, j), pred.get(i, j), sums.row_mut(j));
            }
        }
        let mut outputs = Matrix::zeros(k, n);
        for j in 0..k {
            outputs.row_mut(j).copy_from_slice(&squash(sums.row(j)));
        }
        if it + 1 < iterations {
            for i in 0..p {
                for j in 0..k {
                    let agree = dot(pred.get(i, j), outputs.row(j));
                    let b = logits.get(i, j);
                    logits.set(i, j, b + agree);
                }
            }
        }
        trace.push(RoutingIteration {
            coefficients: c,
            sums,
            outputs,
        });
    }
    let coefficients = trace.last().unwrap().coefficients.clone();
    RoutingTrace {
        iterations: trace,
        final_state: RoutingState {
            logits,
            coefficients,
        },
    }
}

/// Backward pass through every unrolled routing iteration. The coupling
/// coefficients are differentiated, not held constant.
pub fn dynamic_routing_backward(
    pred: &PredictionTensor,
    trace: &RoutingTrace,
    grad_v: &Matrix,
) -> PredictionTensor {
    let (p, k, n) = (pred.num_in, pred.num_out, pred.dim);
    let mut grad_pred = PredictionTensor::zeros(p, k, n);
    // dL/db^{t+1}; zero beyond the last iteration.
    let mut grad_logits = Matrix::zeros(p, k);
    let last = trace.iterations.len() - 1;
    for (t, iter) in trace.iterations.iter().enumerate().rev() {
        let mut gv = if t == last {
            grad_v.clone()
        } else {
            Matrix::zeros(k, n)
        };
        if t < last {
            // b^{t+1}_ij = b^t_ij + û_ij · v^t_j
            for i in 0..p {
                for j in 0..k {
                    let gb = grad_logits.get(i, j);
                    if gb != 0.0 {
                        axpy(gb, pred.get(i, j), gv.row_mut(j));
                        axpy(gb, iter.outputs.row(j), grad_pred.get_mut(i, j));
                    }
                }
            }
        }
        let mut gs = Matrix::zeros(k, n);
        for j in 0..k {
            gs.row_mut(j)
                .copy_from_slice(&squash_backward(iter.sums.row(j), gv.row(j)));
        }
        for i in 0..p {
            let gc: Vec<f64> = (0..k)
                .map(|j| {
                    axpy(
                        iter.coefficients.get(i, j),
                        gs.row(j),
                        grad_pred.get_mut(i, j),
                    );
                    dot(pred.get(i, j), gs.row(j))
                })
                .collect();
            let gb = softmax_backward(iter.coefficients.row(i), &gc);
            for (j, g) in gb.into_iter().enumerate() {
                let prev = grad_logits.get(i, j);
                grad_logits.set(i, j, prev + g);
            }
        }
    }
    grad_pred
}

/// `Σ_ij c_ij (û_{j|i} · v_j)` for one routing iteration.
pub fn agreement(pred: &PredictionTensor, iter: &RoutingIteration) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.num_in {
        for j in 0..pred.num_out {
            total += iter.coefficients.get(i, j) * dot(pred.get(i, j), iter.outputs.row(j));
        }
    }
    total
}
