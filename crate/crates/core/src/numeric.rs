//! Dense row-major matrices, a numerically stable softmax and a central
//! finite-difference gradient checker.
//!
//! Everything here works in `f64`. Tensors in this crate are small, so the
//! kernels are written for clarity rather than cache behaviour.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard used in relative-error denominators.
pub const REL_ERR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y += A x`
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            *out += dot(self.row(r), x);
        }
    }

    /// `y += Aᵀ x`
    pub fn matvec_t_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        for (r, &xr) in x.iter().enumerate() {
            if xr != 0.0 {
                axpy(xr, self.row(r), y);
            }
        }
    }

    /// `A += a bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                let cols = self.cols;
                axpy(ar, b, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik != 0.0 {
                axpy(aik, b.row(k), out_row);
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Usage("softmax of an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Usage(
            "softmax input contains non-finite values".into(),
        ));
    }
    Ok(softmax_unchecked(v))
}

/// Softmax for callers that already guarantee a non-empty finite input.
pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Backward pass of softmax: given `p = softmax(x)` and `dL/dp`, returns `dL/dx`.
pub(crate) fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let inner = dot(p, grad_p);
    p.iter()
        .zip(grad_p)
        .map(|(pi, gi)| pi * (gi - inner))
        .collect()
}

/// A collection of named scalar parameters that can be visited in a fixed order.
///
/// The visiting order defines the flattened layout used by [`grad_check`],
/// the optimizer, and checkpoints.
pub trait ParamSet: Clone {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        self.visit(&mut |_, v| out.extend_from_slice(v));
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    /// Name and in-tensor index of the scalar at flat position `idx`.
    fn path_of(&self, idx: usize) -> String {
        let mut offset = 0;
        let mut found = None;
        self.visit(&mut |name, v| {
            if found.is_none() && idx < offset + v.len() {
                found = Some(format!("{name}[{}]", idx - offset));
            }
            offset += v.len();
        });
        found.unwrap_or_else(|| format!("<out of range {idx}>"))
    }
}

impl ParamSet for Vec<f64> {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("theta", self);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("theta", self);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter_path: String,
    pub num_params_checked: usize,
}

/// Compares analytic gradients against central differences
/// `(f(θ+h) − f(θ−h)) / 2h`, one scalar parameter at a time.
///
/// Fails with a contract error if `loss_fn` is not deterministic.
pub fn grad_check<P, L, G>(
    loss_fn: L,
    analytic_grads: G,
    params: &P,
    step: f64,
) -> Result<GradCheckReport>
where
    P: ParamSet,
    L: Fn(&P) -> f64,
    G: Fn(&P) -> P,
{
    if !(step > 0.0) {
        return Err(Error::Usage(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let base = loss_fn(params);
    let again = loss_fn(params);
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "loss function is not deterministic ({base} vs {again})"
        )));
    }

    let analytic = analytic_grads(params).flatten();
    let theta = params.flatten();
    if analytic.len() != theta.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }

    let mut probe = params.clone();
    let mut flat = theta.clone();
    let mut worst = (0.0f64, None::<usize>);
    for idx in 0..theta.len() {
        flat[idx] = theta[idx] + step;
        probe.assign_flat(&flat);
        let plus = loss_fn(&probe);
        flat[idx] = theta[idx] - step;
        probe.assign_flat(&flat);
        let minus = loss_fn(&probe);
        flat[idx] = theta[idx];

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(REL_ERR_EPS);
        if worst.1.is_none() || rel > worst.0 {
            worst = (rel, Some(idx));
        }
    }

    Ok(GradCheckReport {
        max_relative_error: worst.0,
        worst_parameter_path: worst.1.map_or_else(String::new, |i| params.path_of(i)),
        num_params_checked: theta.len(),
    })
}
