//! Forward primitives shared by the plain API and the gradient tape.
//!
//! Row-wise operations treat a tensor as a matrix whose rows are all leading
//! axes flattened; a 1-D tensor is a single row.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const NORM_EPS: f64 = 1e-12;
pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::dimension("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    matmul_into(a.values(), b.values(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::dimension("matmul_nt", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let mut out = vec![0.0; m * n];
    matmul_nt_into(a.values(), b.values(), m, k, n, &mut out);
    Tensor::new(vec![m, n], out)
}

pub fn softmax(v: &Tensor) -> Result<Tensor> {
    check_finite("softmax", v)?;
    let (r, c) = v.rows_cols();
    let mut out = v.values().to_vec();
    for i in 0..r {
        softmax_in_place(&mut out[i * c..(i + 1) * c]);
    }
    Tensor::new(v.shape().to_vec(), out)
}

pub fn log_softmax(v: &Tensor) -> Result<Tensor> {
    check_finite("log_softmax", v)?;
    let (r, c) = v.rows_cols();
    let mut out = v.values().to_vec();
    for i in 0..r {
        log_softmax_in_place(&mut out[i * c..(i + 1) * c]);
    }
    Tensor::new(v.shape().to_vec(), out)
}

pub fn l2_normalize(v: &Tensor) -> Result<Tensor> {
    let (r, c) = v.rows_cols();
    let mut out = v.values().to_vec();
    for i in 0..r {
        l2_normalize_in_place(&mut out[i * c..(i + 1) * c])?;
    }
    Tensor::new(v.shape().to_vec(), out)
}

pub fn tanh(v: &Tensor) -> Tensor {
    map(v, f64::tanh)
}

pub fn gelu(v: &Tensor) -> Tensor {
    map(v, gelu_scalar)
}

pub fn layer_norm(v: &Tensor) -> Result<Tensor> {
    let (r, c) = v.rows_cols();
    if c < 2 {
        return Err(Error::Domain(format!(
            "layer_norm needs at least 2 features, got {c}"
        )));
    }
    let mut out = v.values().to_vec();
    for i in 0..r {
        layer_norm_in_place(&mut out[i * c..(i + 1) * c]);
    }
    Tensor::new(v.shape().to_vec(), out)
}

fn map(v: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let values = v.values().iter().map(|&x| f(x)).collect();
    Tensor::new(v.shape().to_vec(), values).expect("shape preserved")
}

fn check_finite(op: &str, v: &Tensor) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Domain(format!("{op} of an empty input")));
    }
    if !v.is_finite() {
        return Err(Error::Instability(format!("{op} of non-finite input")));
    }
    Ok(())
}

// ---- slice kernels -------------------------------------------------------

pub(crate) fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out += aᵀ · b` for `a: [m×k]`, `b: [m×n]`, `out: [k×n]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x -= lse;
    }
}

/// Returns the norm of the input row.
pub(crate) fn l2_normalize_in_place(row: &mut [f64]) -> Result<f64> {
    let norm = dot(row, row).sqrt();
    if !(norm > NORM_EPS) {
        return Err(Error::DegenerateVector {
            norm,
            eps: NORM_EPS,
        });
    }
    for x in row.iter_mut() {
        *x /= norm;
    }
    Ok(norm)
}

/// Normalizes to zero mean and unit variance; the variance is floored at
/// `LAYER_NORM_EPS`. Returns `(1/std_eff, floored)`.
pub(crate) fn layer_norm_in_place(row: &mut [f64]) -> (f64, bool) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let floored = var <= LAYER_NORM_EPS;
    let rstd = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) * rstd;
    }
    (rstd, floored)
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
