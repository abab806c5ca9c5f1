//! Tensor-level forward and backward operations.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Stabilizer added to the variance inside the layer-norm square root.
pub const EPS_LN: f64 = 1e-6;

fn check_finite(t: Tensor, context: &str) -> Result<Tensor> {
    t.ensure_finite(context)?;
    Ok(t)
}

fn as_matrix(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Matrix product of `a: m×k` and `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = as_matrix(a, "matmul")?;
    let (k2, n) = as_matrix(b, "matmul")?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("inner dimensions {k} and {k2} differ"),
        ));
    }
    let mut out = vec![0.0; m * n];
    kernels::gemm_acc(a.data(), b.data(), m, k, n, &mut out);
    check_finite(Tensor::new(vec![m, n], out)?, "matmul")
}

/// Accumulates `dA += dC·Bᵀ` and `dB += Aᵀ·dC` into the operands' gradient
/// buffers.
pub fn matmul_backward(a: &mut Tensor, b: &mut Tensor, dc: &Tensor) -> Result<()> {
    let (m, k) = as_matrix(a, "matmul_backward")?;
    let (_, n) = as_matrix(b, "matmul_backward")?;
    if dc.shape() != [m, n] {
        return Err(Error::dim(
            "matmul_backward",
            format!("upstream shape {:?}, expected [{m}, {n}]", dc.shape()),
        ));
    }
    let b_data = b.data().to_vec();
    kernels::gemm_a_bt_acc(dc.data(), &b_data, m, n, k, a.grad_mut());
    let a_data = a.data().to_vec();
    kernels::gemm_at_b_acc(&a_data, dc.data(), m, k, n, b.grad_mut());
    a.ensure_finite("matmul_backward")?;
    b.ensure_finite("matmul_backward")
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    x.ensure_finite("softmax_rows input")?;
    let n = x.cols();
    let mut out = x.data().to_vec();
    if n > 0 {
        for row in out.chunks_exact_mut(n) {
            kernels::softmax_in_place(row);
        }
    }
    check_finite(Tensor::new(x.shape().to_vec(), out)?, "softmax_rows")
}

/// Gradient of [`softmax_rows`] given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    if y.shape() != dy.shape() {
        return Err(Error::dim("softmax_rows_backward", "shape mismatch"));
    }
    let n = y.cols();
    let mut dx = vec![0.0; y.len()];
    if n > 0 {
        for ((yr, dyr), dxr) in y
            .data()
            .chunks_exact(n)
            .zip(dy.data().chunks_exact(n))
            .zip(dx.chunks_exact_mut(n))
        {
            kernels::softmax_backward_row(yr, dyr, dxr);
        }
    }
    check_finite(Tensor::new(y.shape().to_vec(), dx)?, "softmax_rows_backward")
}

fn check_ln_shapes(x: &Tensor, gain: &Tensor, bias: &Tensor, op: &'static str) -> Result<usize> {
    let d = x.cols();
    if x.shape().is_empty() || d == 0 {
        return Err(Error::dim(op, "last axis must be non-empty"));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::dim(
            op,
            format!(
                "gain/bias lengths {}/{} do not match last axis {d}",
                gain.len(),
                bias.len()
            ),
        ));
    }
    Ok(d)
}

/// Layer normalization over the last axis.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = check_ln_shapes(x, gain, bias, "layer_norm")?;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; d];
    for (xr, or) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        kernels::layer_norm_row(xr, gain.data(), bias.data(), EPS_LN, &mut xhat, or);
    }
    check_finite(Tensor::new(x.shape().to_vec(), out)?, "layer_norm")
}

/// Backward of [`layer_norm`]: returns `dx` and accumulates into the
/// gradient buffers of `gain` and `bias`.
pub fn layer_norm_backward(
    x: &Tensor,
    gain: &mut Tensor,
    bias: &mut Tensor,
    dy: &Tensor,
) -> Result<Tensor> {
    let d = check_ln_shapes(x, gain, bias, "layer_norm_backward")?;
    if dy.shape() != x.shape() {
        return Err(Error::dim("layer_norm_backward", "upstream shape mismatch"));
    }
    let gain_values = gain.data().to_vec();
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dx = vec![0.0; x.len()];
    let mut xhat = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for ((xr, dyr), dxr) in x
        .data()
        .chunks_exact(d)
        .zip(dy.data().chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
    {
        let stats =
            kernels::layer_norm_row(xr, &gain_values, bias.data(), EPS_LN, &mut xhat, &mut scratch);
        kernels::layer_norm_backward_row(
            &xhat,
            stats.inv_std,
            &gain_values,
            dyr,
            dxr,
            &mut dgain,
            &mut dbias,
        );
    }
    for (g, v) in gain.grad_mut().iter_mut().zip(&dgain) {
        *g += v;
    }
    for (g, v) in bias.grad_mut().iter_mut().zip(&dbias) {
        *g += v;
    }
    check_finite(Tensor::new(x.shape().to_vec(), dx)?, "layer_norm_backward")
}
