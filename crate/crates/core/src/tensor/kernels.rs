//! Kernels over row-major slices. Matrix products go through a blocked
//! GEMM; the rest are straight loops.

/// `out[m×n] += op(a) · op(b)` through a strided GEMM; strides are
/// `(row, col)` in elements.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the assert above bounds every index the strides can reach,
    // and `out` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn matmul_nn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(a, (k, 1), b, (n, 1), out, m, k, n);
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(a, (k, 1), b, (1, k), out, m, k, n);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(a, (1, k), b, (n, 1), out, k, m, n);
}

/// In-place numerically stable softmax of one row.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Copies the `cols` columns starting at `col0` out of an `rows×stride` matrix.
pub(crate) fn gather_cols(src: &[f64], rows: usize, stride: usize, col0: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        out.extend_from_slice(&src[r * stride + col0..r * stride + col0 + cols]);
    }
    out
}

/// Adds a `rows×cols` block into columns `col0..col0+cols` of an `rows×stride` matrix.
pub(crate) fn scatter_add_cols(dst: &mut [f64], src: &[f64], rows: usize, stride: usize, col0: usize, cols: usize) {
    for r in 0..rows {
        let d = &mut dst[r * stride + col0..r * stride + col0 + cols];
        for (o, &v) in d.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_triple_loop() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut nn = vec![0.0; m * n];
        matmul_nn_acc(&a, &b, &mut nn, m, k, n);
        let mut nt = vec![0.0; m * n];
        matmul_nt_acc(&a, &transpose(&b, k, n), &mut nt, m, k, n);
        let mut tn = vec![0.0; m * n];
        matmul_tn_acc(&transpose(&a, m, k), &b, &mut tn, k, m, n);

        for ((w, x), (y, z)) in want.iter().zip(&nn).zip(nt.iter().zip(&tn)) {
            assert!((w - x).abs() < 1e-12);
            assert!((w - y).abs() < 1e-12);
            assert!((w - z).abs() < 1e-12);
        }
    }
}
