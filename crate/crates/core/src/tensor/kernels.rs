//! Raw computational kernels on flat slices.
//!
//! All loops are single-threaded with a fixed accumulation order so repeated
//! runs are bit-identical. The graph layer owns shape checking; kernels assume
//! consistent sizes.

use super::Scalar;

/// c[m,n] += a[m,k] @ b[k,n]
pub fn gemm_acc<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m,k] += a[m,n] @ b[k,n]^T  (dot products of rows)
pub fn gemm_nt_acc<E: Scalar>(m: usize, n: usize, k: usize, a: &[E], b: &[E], c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        let c_row = &mut c[i * k..(i + 1) * k];
        for (p, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = E::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// c[k,n] += a[m,k]^T @ b[m,n]
pub fn gemm_tn_acc<E: Scalar>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row.iter()) {
                *cv += av * bv;
            }
        }
    }
}

pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Zero-padded 2-D convolution. x: (B,Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<E: Scalar>(
    x: &[E],
    w: &[E],
    bias: &[E],
    batch: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [E],
) {
    for b in 0..batch {
        for co in 0..cout {
            let out_base = (b * cout + co) * oh * ow;
            let bv = bias[co];
            for v in &mut out[out_base..out_base + oh * ow] {
                *v = bv;
            }
            for ci in 0..cin {
                let x_base = (b * cin + ci) * h * wd;
                let w_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w[w_base + ky * kw + kx];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = x_base + iy as usize * wd;
                            let o_row = out_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                out[o_row + ox] += wv * x[x_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d_forward. Any of dx/dw/db may be skipped with None.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<E: Scalar>(
    x: &[E],
    w: &[E],
    dout: &[E],
    batch: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
    mut db: Option<&mut [E]>,
) {
    for b in 0..batch {
        for co in 0..cout {
            let out_base = (b * cout + co) * oh * ow;
            if let Some(db) = db.as_deref_mut() {
                let mut acc = E::ZERO;
                for &g in &dout[out_base..out_base + oh * ow] {
                    acc += g;
                }
                db[co] += acc;
            }
            for ci in 0..cin {
                let x_base = (b * cin + ci) * h * wd;
                let w_base = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = w[w_base + ky * kw + kx];
                        let mut wacc = E::ZERO;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let x_row = x_base + iy as usize * wd;
                            let o_row = out_base + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let g = dout[o_row + ox];
                                wacc += g * x[x_row + ix as usize];
                                if let Some(dx) = dx.as_deref_mut() {
                                    dx[x_row + ix as usize] += wv * g;
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[w_base + ky * kw + kx] += wacc;
                        }
                    }
                }
            }
        }
    }
}

/// Sample positions for align-corners=false bilinear interpolation.
/// Returns (lo index, hi index, hi weight) per output coordinate.
pub fn bilinear_axis(in_dim: usize, out_dim: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let lo = src.floor();
            let t = src - lo;
            let i0 = lo.max(0.0).min((in_dim - 1) as f64) as usize;
            let i1 = (lo + 1.0).max(0.0).min((in_dim - 1) as f64) as usize;
            (i0, i1, t)
        })
        .collect()
}

/// x: (B,C,H,W) -> out: (B,C,oh,ow). Same-size resize is an exact copy.
#[allow(clippy::too_many_arguments)]
pub fn bilinear_forward<E: Scalar>(
    x: &[E],
    bc: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    out: &mut [E],
) {
    if oh == h && ow == w {
        out.copy_from_slice(x);
        return;
    }
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    for p in 0..bc {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let v00 = src[y0 * w + x0].to_f64();
                let v01 = src[y0 * w + x1].to_f64();
                let v10 = src[y1 * w + x0].to_f64();
                let v11 = src[y1 * w + x1].to_f64();
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                dst[oy * ow + ox] = E::from_f64(top + (bot - top) * ty);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn bilinear_backward<E: Scalar>(
    dout: &[E],
    bc: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    dx: &mut [E],
) {
    if oh == h && ow == w {
        for (d, &g) in dx.iter_mut().zip(dout.iter()) {
            *d += g;
        }
        return;
    }
    let ys = bilinear_axis(h, oh);
    let xs = bilinear_axis(w, ow);
    for p in 0..bc {
        let src = &dout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let g = src[oy * ow + ox].to_f64();
                dst[y0 * w + x0] += E::from_f64(g * (1.0 - tx) * (1.0 - ty));
                dst[y0 * w + x1] += E::from_f64(g * tx * (1.0 - ty));
                dst[y1 * w + x0] += E::from_f64(g * (1.0 - tx) * ty);
                dst[y1 * w + x1] += E::from_f64(g * tx * ty);
            }
        }
    }
}

/// Per-row standardization over the last axis, then affine transform.
/// Returns saved (mean, rstd) per row for the backward pass.
pub fn layer_norm_forward<E: Scalar>(
    x: &[E],
    gamma: &[E],
    beta: &[E],
    eps: f64,
    c: usize,
    out: &mut [E],
) -> Vec<(E, E)> {
    let rows = x.len() / c;
    let mut saved = Vec::with_capacity(rows);
    let inv_c = E::from_f64(1.0 / c as f64);
    for r in 0..rows {
        let row = &x[r * c..(r + 1) * c];
        let mut mean = E::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_c;
        let mut var = E::ZERO;
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_c;
        let rstd = E::ONE / (var + E::from_f64(eps)).sqrt();
        let dst = &mut out[r * c..(r + 1) * c];
        for i in 0..c {
            dst[i] = (row[i] - mean) * rstd * gamma[i] + beta[i];
        }
        saved.push((mean, rstd));
    }
    saved
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<E: Scalar>(
    x: &[E],
    gamma: &[E],
    saved: &[(E, E)],
    dout: &[E],
    c: usize,
    dx: &mut [E],
    dgamma: &mut [E],
    dbeta: &mut [E],
) {
    let rows = x.len() / c;
    let inv_c = E::from_f64(1.0 / c as f64);
    let mut xhat = vec![E::ZERO; c];
    for r in 0..rows {
        let (mean, rstd) = saved[r];
        let row = &x[r * c..(r + 1) * c];
        let gout = &dout[r * c..(r + 1) * c];
        let mut sum_dxhat = E::ZERO;
        let mut sum_dxhat_xhat = E::ZERO;
        for i in 0..c {
            xhat[i] = (row[i] - mean) * rstd;
            let dxh = gout[i] * gamma[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[i];
            dgamma[i] += gout[i] * xhat[i];
            dbeta[i] += gout[i];
        }
        let mean_dxhat = sum_dxhat * inv_c;
        let mean_dxhat_xhat = sum_dxhat_xhat * inv_c;
        let drow = &mut dx[r * c..(r + 1) * c];
        for i in 0..c {
            let dxh = gout[i] * gamma[i];
            drow[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
}

/// Shift-invariant softmax over contiguous rows of length `n`.
pub fn softmax_rows<E: Scalar>(x: &[E], n: usize, out: &mut [E]) {
    for r in 0..x.len() / n {
        let row = &x[r * n..(r + 1) * n];
        let dst = &mut out[r * n..(r + 1) * n];
        let mut m = row[0];
        for &v in row {
            m = m.max(v);
        }
        let mut sum = E::ZERO;
        for i in 0..n {
            let e = (row[i] - m).exp();
            dst[i] = e;
            sum += e;
        }
        let inv = E::ONE / sum;
        for v in dst.iter_mut() {
            *v *= inv;
        }
    }
}

/// dx = y * (dy - sum(dy * y)) per row, where y is the softmax output.
pub fn softmax_backward_rows<E: Scalar>(y: &[E], dout: &[E], n: usize, dx: &mut [E]) {
    for r in 0..y.len() / n {
        let yr = &y[r * n..(r + 1) * n];
        let gr = &dout[r * n..(r + 1) * n];
        let mut dot = E::ZERO;
        for i in 0..n {
            dot += yr[i] * gr[i];
        }
        let dr = &mut dx[r * n..(r + 1) * n];
        for i in 0..n {
            dr[i] += yr[i] * (gr[i] - dot);
        }
    }
}

/// Exact-erf gelu, evaluated in f64 for cross-dtype agreement.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// d/dx gelu(x) = Phi(x) + x * phi(x)
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * pdf
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_arithmetic() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm_acc(2, 2, 2, &a, &b, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gemm_transposed_variants_agree_with_plain() {
        let m = 3;
        let k = 4;
        let n = 2;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.51).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_acc(m, k, n, &a, &b, &mut c);

        // a = c @ b^T should satisfy gemm_nt on (c, b)
        let mut a2 = vec![0.0; m * k];
        gemm_nt_acc(m, n, k, &c, &b_t_as_rows(&b, k, n), &mut a2);
        // b^T rows are columns of b; rebuild b from the identity a2 = c @ (b^T)^T? Instead
        // verify gemm_tn: (a^T @ c) has shape [k, n] and equals b scaled by (a^T a) only in
        // special cases, so check gemm_nt/gemm_tn against naive loops directly.
        let mut nt = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += c[i * n + j] * b[p * n + j];
                }
                nt[i * k + p] = acc;
            }
        }
        let mut nt_k = vec![0.0; m * k];
        gemm_nt_acc(m, n, k, &c, &b, &mut nt_k);
        assert_eq!(nt_k, nt);
        let _ = a2;

        let mut tn = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += a[i * k + p] * c[i * n + j];
                }
                tn[p * n + j] = acc;
            }
        }
        let mut tn_k = vec![0.0; k * n];
        gemm_tn_acc(m, k, n, &a, &c, &mut tn_k);
        assert_eq!(tn_k, tn);
    }

    fn b_t_as_rows(b: &[f64], k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                out[j * k + i] = b[i * n + j];
            }
        }
        out
    }

    #[test]
    fn conv_all_ones_kernel_sums_window() {
        let x = [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let w = [1.0f32; 9];
        let bias = [0.0f32];
        let mut out = [0.0f32];
        conv2d_forward(&x, &w, &bias, 1, 1, 3, 3, 1, 3, 3, 1, 0, 1, 1, &mut out);
        assert_eq!(out[0], 45.0);
    }

    #[test]
    fn conv_shape_arithmetic() {
        assert_eq!(conv2d_out_dim(8, 3, 2, 1), Some(4));
        assert_eq!(conv2d_out_dim(64, 7, 4, 3), Some(16));
        assert_eq!(conv2d_out_dim(2, 5, 1, 0), None);
    }

    #[test]
    fn layer_norm_hand_case() {
        // x=[1,3], gamma=1, beta=0, eps tiny -> [-1, 1]
        let x = [1.0f64, 3.0];
        let gamma = [1.0f64, 1.0];
        let beta = [0.0f64, 0.0];
        let mut out = [0.0f64; 2];
        layer_norm_forward(&x, &gamma, &beta, 1e-12, 2, &mut out);
        assert!((out[0] + 1.0).abs() < 1e-6);
        assert!((out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_hand_case() {
        // [0, ln 2] -> [1/3, 2/3]
        let x = [0.0f64, (2.0f64).ln()];
        let mut out = [0.0f64; 2];
        softmax_rows(&x, 2, &mut out);
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu_grad(0.0) - 0.5).abs() < 1e-12);
        // gelu(x) -> x for large x, -> 0 for very negative x
        assert!((gelu(10.0) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0).abs() < 1e-9);
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let x = vec![3.5f32; 4 * 4];
        let mut out = vec![0.0f32; 7 * 5];
        bilinear_forward(&x, 1, 4, 4, 7, 5, &mut out);
        assert!(out.iter().all(|&v| (v - 3.5).abs() < 1e-6));

        let x: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let mut same = vec![0.0f32; 16];
        bilinear_forward(&x, 1, 4, 4, 4, 4, &mut same);
        assert_eq!(same, x);

        // 1x1 -> 2x2 replicates
        let x = vec![2.25f32];
        let mut out = vec![0.0f32; 4];
        bilinear_forward(&x, 1, 1, 1, 2, 2, &mut out);
        assert_eq!(out, vec![2.25; 4]);
    }
}
