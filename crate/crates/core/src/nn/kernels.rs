//! Raw forward/backward kernels on row-major slices.
//!
//! These carry no shape checks; callers in `tape` validate first.

/// `c[n,m] = a[n,k] · b[k,m]` (overwrites `c`).
pub fn matmul(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    gemm(n, k, m, a, (k, 1), b, (m, 1), c, 0.0);
}

/// `c[n,m] = a[n,k] · b[m,k]ᵀ`.
pub fn matmul_nt(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    gemm(n, k, m, a, (k, 1), b, (1, k), c, 0.0);
}

/// `c[k,m] += a[n,k]ᵀ · b[n,m]`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    gemm(k, n, m, a, (1, k), b, (m, 1), c, 1.0);
}

/// `c[n,k] += a[n,m] · b[k,m]ᵀ`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    gemm(n, m, k, a, (m, 1), b, (1, m), c, 1.0);
}

/// `c[n,m] += a[n,k] · b[k,m]`.
pub fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    gemm(n, k, m, a, (k, 1), b, (m, 1), c, 1.0);
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: the asserted lengths cover every index reachable with the given
    // strides, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &[f64], out: &mut [f64], m: usize) {
    for (row, orow) in x.chunks_exact(m).zip(out.chunks_exact_mut(m)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        let inv = 1.0 / sum;
        orow.iter_mut().for_each(|o| *o *= inv);
    }
}

/// Backward through row softmax given its output `y`.
pub fn softmax_rows_backward(y: &[f64], dy: &[f64], dx: &mut [f64], m: usize) {
    for ((yr, gr), dr) in y.chunks_exact(m).zip(dy.chunks_exact(m)).zip(dx.chunks_exact_mut(m)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d += yv * (gv - dot);
        }
    }
}

/// Normalizes each row to zero mean and unit variance; returns per-row `1/σ`.
pub fn normalize_rows(x: &[f64], xhat: &mut [f64], d: usize, eps: f64) -> Vec<f64> {
    let mut inv_std = Vec::with_capacity(x.len() / d);
    for (row, hrow) in x.chunks_exact(d).zip(xhat.chunks_exact_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        for (h, &v) in hrow.iter_mut().zip(row) {
            *h = (v - mean) * is;
        }
        inv_std.push(is);
    }
    inv_std
}

/// Gradient of `normalize_rows` w.r.t. its input, accumulated into `dx`.
pub fn normalize_rows_backward(xhat: &[f64], inv_std: &[f64], g: &[f64], dx: &mut [f64], d: usize) {
    let df = d as f64;
    for (((hrow, grow), drow), &is) in xhat
        .chunks_exact(d)
        .zip(g.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv_std)
    {
        let sum_g: f64 = grow.iter().sum();
        let sum_gh: f64 = grow.iter().zip(hrow).map(|(a, b)| a * b).sum();
        for ((dv, &gv), &hv) in drow.iter_mut().zip(grow).zip(hrow) {
            *dv += is / df * (df * gv - sum_g - hv * sum_gh);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}
