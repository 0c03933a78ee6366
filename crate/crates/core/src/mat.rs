//! Flat row-major matrix helpers for the network code.
//!
//! Everything is `&[f64]` plus explicit dimensions; matrices are row-major so
//! `a[r * cols + c]` addresses row `r`, column `c`.  All loops are written
//! with the independent dimension innermost (broadcast-scalar times
//! contiguous row) so the compiler can vectorize them without reassociating
//! float sums.

/// `out += a · b` for `a: (m, k)`, `b: (k, n)`, `out: (m, n)`.
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ik * bv;
            }
        }
    }
}

/// `out += aᵀ · b` for `a: (m, k)`, `b: (m, n)`, `out: (k, n)`.
///
/// This is the weight-gradient shape: rows of `a` are inputs, rows of `b` are
/// output gradients, summed over the batch/sequence dimension `m`.
pub fn matmul_at_b_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let b_row = &b[r * n..(r + 1) * n];
        for (kk, &a_rk) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_rk * bv;
            }
        }
    }
}

/// Transposes `src: (rows, cols)` into `dst: (cols, rows)`.
pub fn transpose_into(dst: &mut Vec<f64>, src: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(src.len(), rows * cols);
    dst.clear();
    dst.resize(rows * cols, 0.0);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Adds the bias row `b: (n,)` to every row of `out: (m, n)`.
pub fn add_bias(out: &mut [f64], b: &[f64], m: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(b.len(), n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (o, &bv) in row.iter_mut().zip(b) {
            *o += bv;
        }
    }
}

/// Column sums of `a: (m, n)` accumulated into `out: (n,)` — the bias
/// gradient shape.
pub fn col_sum_acc(out: &mut [f64], a: &[f64], m: usize, n: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(out.len(), n);
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Sum of squares with split accumulators so the reduction vectorizes.
pub fn sum_squares(xs: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = xs.chunks_exact(4);
    let rem = chunks.remainder();
    for c in chunks {
        acc[0] += c[0] * c[0];
        acc[1] += c[1] * c[1];
        acc[2] += c[2] * c[2];
        acc[3] += c[3] * c[3];
    }
    let mut tail = 0.0;
    for &v in rem {
        tail += v * v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_computation() {
        // (2x3) · (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut out = [0.0; 4];
        matmul_acc(&mut out, &a, &b, 2, 3, 2);
        assert_eq!(out, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_at_b_matches_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // (3, 2)
        let b = [1.0, -1.0, 2.0, 0.5, 0.0, 3.0]; // (3, 2)
        let mut got = [0.0; 4];
        matmul_at_b_acc(&mut got, &a, &b, 3, 2, 2);

        let mut at = vec![0.0; 6];
        transpose_into(&mut at, &a, 3, 2);
        let mut want = [0.0; 4];
        matmul_acc(&mut want, &at, &b, 2, 3, 2);
        assert_eq!(got, want);
    }

    #[test]
    fn bias_and_col_sum_round_trip() {
        let mut out = [0.0; 6];
        add_bias(&mut out, &[1.0, 2.0, 3.0], 2, 3);
        assert_eq!(out, [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let mut sums = [0.0; 3];
        col_sum_acc(&mut sums, &out, 2, 3);
        assert_eq!(sums, [2.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_squares_matches_naive() {
        let xs: Vec<f64> = (1..=11).map(|i| i as f64 * 0.5).collect();
        let naive: f64 = xs.iter().map(|v| v * v).sum();
        assert!((sum_squares(&xs) - naive).abs() < 1e-12);
    }
}
