//! Scalar loops behind the tensor ops.
//!
//! Every output element of a product is a [`dot`] over contiguous slices with
//! a fixed lane assignment (element `k` always lands in lane `k % LANES`), so
//! a row's result does not depend on how many other rows are computed with
//! it. Incremental decoding relies on this to match a full forward pass bit
//! for bit.

const LANES: usize = 4;

#[inline]
fn reduce(acc: [f64; LANES]) -> f64 {
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let xa = &a[base..base + LANES];
        let xb = &b[base..base + LANES];
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    for k in chunks * LANES..a.len() {
        acc[k % LANES] += a[k] * b[k];
    }
    reduce(acc)
}

/// Four dot products sharing the left operand; identical arithmetic to four
/// separate [`dot`] calls.
#[inline]
fn dot4(a: &[f64], b0: &[f64], b1: &[f64], b2: &[f64], b3: &[f64]) -> [f64; 4] {
    let mut acc = [[0.0; LANES]; 4];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        let xa = &a[base..base + LANES];
        let y0 = &b0[base..base + LANES];
        let y1 = &b1[base..base + LANES];
        let y2 = &b2[base..base + LANES];
        let y3 = &b3[base..base + LANES];
        for l in 0..LANES {
            acc[0][l] += xa[l] * y0[l];
            acc[1][l] += xa[l] * y1[l];
            acc[2][l] += xa[l] * y2[l];
            acc[3][l] += xa[l] * y3[l];
        }
    }
    for k in chunks * LANES..a.len() {
        acc[0][k % LANES] += a[k] * b0[k];
        acc[1][k % LANES] += a[k] * b1[k];
        acc[2][k % LANES] += a[k] * b2[k];
        acc[3][k % LANES] += a[k] * b3[k];
    }
    [reduce(acc[0]), reduce(acc[1]), reduce(acc[2]), reduce(acc[3])]
}

/// `C[m×n] = A[m×k] · B[n×k]ᵀ`.
pub fn matmul_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        let ci = &mut c[i * n..(i + 1) * n];
        let mut j = 0;
        while j + 4 <= n {
            let r = dot4(
                ai,
                &b[j * k..(j + 1) * k],
                &b[(j + 1) * k..(j + 2) * k],
                &b[(j + 2) * k..(j + 3) * k],
                &b[(j + 3) * k..(j + 4) * k],
            );
            ci[j..j + 4].copy_from_slice(&r);
            j += 4;
        }
        while j < n {
            ci[j] = dot(ai, &b[j * k..(j + 1) * k]);
            j += 1;
        }
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

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

/// `log softmax(row)[target]`, stabilised by max subtraction.
pub fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row[target] - max - sum.ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub const LN_EPS: f64 = 1e-5;

/// Layer norm of one row; returns `(mean, 1/std)`.
pub fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    }
    (mean, rstd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[j * k + p];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_nt_matches_triple_loop() {
        for (m, k, n) in [(1, 1, 1), (3, 5, 7), (6, 9, 4), (2, 64, 13)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.11).cos()).collect();
            let fast = matmul_nt(&a, m, k, &b, n);
            let slow = naive(&a, m, k, &b, n);
            for (x, y) in fast.iter().zip(&slow) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn row_results_do_not_depend_on_row_count() {
        let (k, n) = (23, 9);
        let a: Vec<f64> = (0..5 * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.3).cos()).collect();
        let all = matmul_nt(&a, 5, k, &b, n);
        let last = matmul_nt(&a[4 * k..], 1, k, &b, n);
        assert_eq!(&all[4 * n..], last.as_slice());
    }

    #[test]
    fn gelu_grad_matches_difference_quotient() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
