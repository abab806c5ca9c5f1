//! Slice-level dense kernels. All matrices are row-major.
//!
//! The matrix kernels are compiled twice, for the baseline target and with
//! AVX2, and pick one at runtime. Both builds perform the same floating-point
//! operations in the same order, so their results are bit-identical.

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn gemm_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        return unsafe { gemm_acc_avx2(a, b, m, k, n, c) };
    }
    gemm_acc_body(a, b, m, k, n, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_acc_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    gemm_acc_body(a, b, m, k, n, c)
}

#[inline(always)]
fn gemm_acc_body(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    rank_updates(c, m, n, k, b, |r, q| a[r * k + q]);
}

/// `c[r][j] += Σ_q coef(r, q)·b[q][j]` for `c: rows×n`, `b: inner×n`.
///
/// Two output rows and a block of columns are held in registers across the
/// whole inner loop; the sum over `q` runs in order.
#[inline(always)]
fn rank_updates(
    c: &mut [f64],
    rows: usize,
    n: usize,
    inner: usize,
    b: &[f64],
    coef: impl Fn(usize, usize) -> f64,
) {
    const W: usize = 16;
    let n_main = n - n % W;
    let rows2 = rows - rows % 2;
    for r in (0..rows2).step_by(2) {
        let (c0, c1) = c[r * n..(r + 2) * n].split_at_mut(n);
        for j in (0..n_main).step_by(W) {
            let mut acc0: [f64; W] = c0[j..j + W].try_into().expect("block");
            let mut acc1: [f64; W] = c1[j..j + W].try_into().expect("block");
            for q in 0..inner {
                let (x0, x1) = (coef(r, q), coef(r + 1, q));
                let br: &[f64; W] = b[q * n + j..q * n + j + W].try_into().expect("block");
                for l in 0..W {
                    acc0[l] += x0 * br[l];
                    acc1[l] += x1 * br[l];
                }
            }
            c0[j..j + W].copy_from_slice(&acc0);
            c1[j..j + W].copy_from_slice(&acc1);
        }
        for j in n_main..n {
            let (mut s0, mut s1) = (c0[j], c1[j]);
            for q in 0..inner {
                s0 += coef(r, q) * b[q * n + j];
                s1 += coef(r + 1, q) * b[q * n + j];
            }
            c0[j] = s0;
            c1[j] = s1;
        }
    }
    for r in rows2..rows {
        let c_row = &mut c[r * n..(r + 1) * n];
        for j in (0..n_main).step_by(W) {
            let mut acc: [f64; W] = c_row[j..j + W].try_into().expect("block");
            for q in 0..inner {
                let x = coef(r, q);
                let br: &[f64; W] = b[q * n + j..q * n + j + W].try_into().expect("block");
                for l in 0..W {
                    acc[l] += x * br[l];
                }
            }
            c_row[j..j + W].copy_from_slice(&acc);
        }
        for j in n_main..n {
            let mut s = c_row[j];
            for q in 0..inner {
                s += coef(r, q) * b[q * n + j];
            }
            c_row[j] = s;
        }
    }
}

/// `c += aᵀ · b` with `a: m×k`, `b: m×n`, `c: k×n`.
pub fn gemm_at_b_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        return unsafe { gemm_at_b_acc_avx2(a, b, m, k, n, c) };
    }
    gemm_at_b_acc_body(a, b, m, k, n, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_at_b_acc_avx2(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    gemm_at_b_acc_body(a, b, m, k, n, c)
}

#[inline(always)]
fn gemm_at_b_acc_body(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    rank_updates(c, k, n, m, b, |r, q| a[q * k + r]);
}

/// `c += a · bᵀ` with `a: m×n`, `b: k×n`, `c: m×k`.
pub fn gemm_a_bt_acc(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        return unsafe { gemm_a_bt_acc_avx2(a, b, m, n, k, c) };
    }
    gemm_a_bt_acc_body(a, b, m, n, k, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_a_bt_acc_avx2(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    gemm_a_bt_acc_body(a, b, m, n, k, c)
}

#[inline(always)]
fn gemm_a_bt_acc_body(a: &[f64], b: &[f64], m: usize, n: usize, k: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            c[i * k + p] += dot_body(a_row, &b[p * n..(p + 1) * n]);
        }
    }
}

/// Dot product accumulated in four interleaved lanes, then summed.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: AVX2 support was just checked.
        return unsafe { dot_avx2(a, b) };
    }
    dot_body(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f64], b: &[f64]) -> f64 {
    dot_body(a, b)
}

#[inline(always)]
fn dot_body(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n4 = a.len() - a.len() % 4;
    let mut acc = [0.0; 4];
    for (x, y) in a[..n4].chunks_exact(4).zip(b[..n4].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[n4..].iter().zip(&b[n4..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Column sums of an `m×n` matrix added into `out`.
pub fn col_sum_acc(a: &[f64], n: usize, out: &mut [f64]) {
    for row in a.chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// In-place max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax Jacobian-vector product for one row: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward_row(y: &[f64], dy: &[f64], dx: &mut [f64]) {
    let inner = dot(y, dy);
    for ((d, &yv), &dyv) in dx.iter_mut().zip(y).zip(dy) {
        *d = yv * (dyv - inner);
    }
}

/// Per-row statistics kept by the layer-norm forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowStats {
    pub mean: f64,
    pub inv_std: f64,
}

/// Layer norm of one row: writes the normalized row (before affine) into
/// `xhat` and the affine output into `out`.
pub fn layer_norm_row(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    eps: f64,
    xhat: &mut [f64],
    out: &mut [f64],
) -> RowStats {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    for j in 0..x.len() {
        xhat[j] = (x[j] - mean) * inv_std;
        out[j] = gain[j] * xhat[j] + bias[j];
    }
    RowStats { mean, inv_std }
}

/// Backward of [`layer_norm_row`]. Accumulates into `dgain`/`dbias` and
/// overwrites `dx`.
pub fn layer_norm_backward_row(
    xhat: &[f64],
    inv_std: f64,
    gain: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let d = xhat.len() as f64;
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for j in 0..xhat.len() {
        dgain[j] += dy[j] * xhat[j];
        dbias[j] += dy[j];
        let g = dy[j] * gain[j];
        mean_dxhat += g;
        mean_dxhat_xhat += g * xhat[j];
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    for j in 0..xhat.len() {
        let g = dy[j] * gain[j];
        dx[j] = inv_std * (g - mean_dxhat - xhat[j] * mean_dxhat_xhat);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
