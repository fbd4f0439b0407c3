//! Forward kernels shared by the tape and the inference paths. The graph
//! ops call straight into these, so tracked and untracked forward passes
//! produce bit-identical values.

use crate::error::{Error, Result};

use super::tensor::Tensor;

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            format!("{} vs {}", a.shape_string(), b.shape_string()),
        ));
    }
    Ok(())
}

fn require_row(op: &'static str, a: &Tensor, row: &Tensor) -> Result<()> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::shape(
            op,
            format!("expected row [1 x {}], got {}", a.cols(), row.shape_string()),
        ));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("add", a, b)?;
    Ok(a.zip_with(b, |x, y| x + y))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("sub", a, b)?;
    Ok(a.zip_with(b, |x, y| x - y))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_same_shape("mul", a, b)?;
    Ok(a.zip_with(b, |x, y| x * y))
}

pub fn add_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    require_row("add_row", a, row)?;
    let mut out = a.clone();
    let cols = a.cols();
    for r in 0..a.rows() {
        let chunk = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (o, &b) in chunk.iter_mut().zip(row.data()) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn mul_row(a: &Tensor, row: &Tensor) -> Result<Tensor> {
    require_row("mul_row", a, row)?;
    let mut out = a.clone();
    let cols = a.cols();
    for r in 0..a.rows() {
        let chunk = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for (o, &b) in chunk.iter_mut().zip(row.data()) {
            *o *= b;
        }
    }
    Ok(out)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|x| x * c)
}

/// Sum over rows, producing `[1 x cols]`.
pub fn col_sum(a: &Tensor) -> Tensor {
    let cols = a.cols();
    let mut out = vec![0.0; cols];
    for r in 0..a.rows() {
        for (o, &v) in out.iter_mut().zip(a.row_slice(r)) {
            *o += v;
        }
    }
    Tensor::from_vec(1, cols, out).expect("col_sum shape")
}

fn dgemm_into(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), m * n);
    // Strides describe either the natural row-major layout or its
    // transpose; both views stay inside the buffers checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `a [m x k] * b [k x n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.rows() {
        return Err(Error::shape(
            "matmul",
            format!("{} * {}", a.shape_string(), b.shape_string()),
        ));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    dgemm_into(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), &mut out);
    Tensor::from_vec(m, n, out)
}

/// `a [m x k] * b^T` where `b` is `[n x k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.cols(), b.cols());
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    dgemm_into(m, k, n, a.data(), (k as isize, 1), b.data(), (1, k as isize), &mut out);
    Tensor::from_vec(m, n, out).expect("matmul_nt shape")
}

/// `a^T * b` where `a` is `[k x m]` and `b` is `[k x n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.rows(), b.rows());
    let (m, k, n) = (a.cols(), a.rows(), b.cols());
    let mut out = vec![0.0; m * n];
    dgemm_into(m, k, n, a.data(), (1, m as isize), b.data(), (n as isize, 1), &mut out);
    Tensor::from_vec(m, n, out).expect("matmul_tn shape")
}

pub fn leaky_relu(a: &Tensor, slope: f64) -> Tensor {
    a.map(|x| if x > 0.0 { x } else { slope * x })
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(|x| {
        // Split by sign to avoid overflow in exp.
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    })
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

pub fn exp(a: &Tensor) -> Tensor {
    a.map(f64::exp)
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    if let Some(bad) = a.iter().find(|v| **v <= 0.0 || !v.is_finite()) {
        return Err(Error::numerics(format!("log requires positive finite inputs, got {bad}")));
    }
    Ok(a.map(f64::ln))
}

pub fn abs(a: &Tensor) -> Tensor {
    a.map(f64::abs)
}

pub fn square(a: &Tensor) -> Tensor {
    a.map(|x| x * x)
}

pub fn sum(a: &Tensor) -> Tensor {
    Tensor::scalar(a.iter().sum())
}

pub fn mean(a: &Tensor) -> Tensor {
    Tensor::scalar(a.iter().sum::<f64>() / a.len() as f64)
}

pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "concat_cols",
            format!("{} vs {}", a.shape_string(), b.shape_string()),
        ));
    }
    let cols = a.cols() + b.cols();
    let mut out = Vec::with_capacity(a.rows() * cols);
    for r in 0..a.rows() {
        out.extend_from_slice(a.row_slice(r));
        out.extend_from_slice(b.row_slice(r));
    }
    Tensor::from_vec(a.rows(), cols, out)
}

pub fn slice_cols(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    if start >= end || end > a.cols() {
        return Err(Error::shape(
            "slice_cols",
            format!("range {start}..{end} out of {} columns", a.cols()),
        ));
    }
    let cols = end - start;
    let mut out = Vec::with_capacity(a.rows() * cols);
    for r in 0..a.rows() {
        out.extend_from_slice(&a.row_slice(r)[start..end]);
    }
    Tensor::from_vec(a.rows(), cols, out)
}

/// Splits columns at `at`, inverse of [`concat_cols`].
pub fn split_cols(a: &Tensor, at: usize) -> (Tensor, Tensor) {
    let left = slice_cols(a, 0, at).expect("split_cols left");
    let right = slice_cols(a, at, a.cols()).expect("split_cols right");
    (left, right)
}

/// Places `g` (the gradient of a column slice) back into a zero tensor of
/// the original shape.
pub fn embed_cols(g: &Tensor, rows: usize, cols: usize, start: usize, end: usize) -> Tensor {
    let mut out = Tensor::zeros(rows, cols);
    for r in 0..rows {
        let dst = &mut out.data_mut()[r * cols + start..r * cols + end];
        dst.copy_from_slice(g.row_slice(r));
    }
    out
}

/// Row-wise normalization to zero mean and unit variance; `eps` stabilizes
/// the variance under the square root.
pub fn layer_norm(a: &Tensor, eps: f64) -> Tensor {
    let cols = a.cols();
    let n = cols as f64;
    let mut out = a.clone();
    for r in 0..a.rows() {
        let row = a.row_slice(r);
        let mean: f64 = row.iter().sum::<f64>() / n;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (o, &v) in out.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - mean) * inv_std;
        }
    }
    out
}

/// Gradient of [`layer_norm`]: per row,
/// `dx = (g - mean(g) - y * mean(g * y)) / std`.
pub fn layer_norm_backward(x: &Tensor, y: &Tensor, g: &Tensor, eps: f64) -> Tensor {
    let cols = x.cols();
    let n = cols as f64;
    let mut out = Tensor::zeros(x.rows(), cols);
    for r in 0..x.rows() {
        let xr = x.row_slice(r);
        let yr = y.row_slice(r);
        let gr = g.row_slice(r);
        let mean: f64 = xr.iter().sum::<f64>() / n;
        let var: f64 = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + eps).sqrt();
        let g_mean: f64 = gr.iter().sum::<f64>() / n;
        let gy_mean: f64 = gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum::<f64>() / n;
        let dst = &mut out.data_mut()[r * cols..(r + 1) * cols];
        for i in 0..cols {
            dst[i] = (gr[i] - g_mean - yr[i] * gy_mean) * inv_std;
        }
    }
    out
}
