//! Dense row-major matrix kernels used by the autodiff engine.
//!
//! Everything here is deterministic: inner accumulation order is fixed per
//! output element, and parallelism (via [`crate::util::for_each_chunk_mut`])
//! only partitions disjoint output rows, so sequential and parallel runs
//! produce bitwise-identical results.
//!
//! The multiply kernel processes 4x8 output blocks with `mul_add` so LLVM
//! emits FMA vector code; that is the difference between ~2 and ~15 GFLOP/s
//! on one core, which the training-scale tests depend on.

use crate::util::for_each_chunk_mut;

/// Rows handed to one parallel task.
const ROWS_PER_TASK: usize = 32;
const MR: usize = 4;
const NR: usize = 8;

/// `c = a * b` with `a: [m,k]`, `b: [k,n]`, `c: [m,n]`, all row-major.
/// Overwrites `c`.
pub fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k, "gemm_nn: lhs size");
    assert_eq!(b.len(), k * n, "gemm_nn: rhs size");
    assert_eq!(c.len(), m * n, "gemm_nn: out size");
    if m == 0 || n == 0 {
        return;
    }
    for_each_chunk_mut(c, ROWS_PER_TASK * n, |task, c_blk| {
        let i0 = task * ROWS_PER_TASK;
        let rows = c_blk.len() / n;
        gemm_nn_block(i0, rows, k, n, a, b, c_blk);
    });
}

/// One task's worth of rows: `c_blk` holds rows `i0 .. i0+rows` of C.
fn gemm_nn_block(i0: usize, rows: usize, k: usize, n: usize, a: &[f64], b: &[f64], c_blk: &mut [f64]) {
    let mut r = 0;
    while r + MR <= rows {
        let a0 = &a[(i0 + r) * k..(i0 + r) * k + k];
        let a1 = &a[(i0 + r + 1) * k..(i0 + r + 1) * k + k];
        let a2 = &a[(i0 + r + 2) * k..(i0 + r + 2) * k + k];
        let a3 = &a[(i0 + r + 3) * k..(i0 + r + 3) * k + k];
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f64; NR]; MR];
            for kk in 0..k {
                let bk: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                let av = [a0[kk], a1[kk], a2[kk], a3[kk]];
                for rr in 0..MR {
                    for cc in 0..NR {
                        acc[rr][cc] = av[rr].mul_add(bk[cc], acc[rr][cc]);
                    }
                }
            }
            for rr in 0..MR {
                c_blk[(r + rr) * n + j..(r + rr) * n + j + NR].copy_from_slice(&acc[rr]);
            }
            j += NR;
        }
        // column tail
        while j < n {
            let mut acc = [0.0f64; MR];
            for kk in 0..k {
                let bv = b[kk * n + j];
                acc[0] = a0[kk].mul_add(bv, acc[0]);
                acc[1] = a1[kk].mul_add(bv, acc[1]);
                acc[2] = a2[kk].mul_add(bv, acc[2]);
                acc[3] = a3[kk].mul_add(bv, acc[3]);
            }
            for rr in 0..MR {
                c_blk[(r + rr) * n + j] = acc[rr];
            }
            j += 1;
        }
        r += MR;
    }
    // row tail
    while r < rows {
        let arow = &a[(i0 + r) * k..(i0 + r) * k + k];
        let crow = &mut c_blk[r * n..r * n + n];
        crow.fill(0.0);
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = av.mul_add(bv, *cv);
            }
        }
        r += 1;
    }
}

/// `c += a * b^T` with `a: [m,n]`, `b: [j,n]` row-major, `c: [m,j]`.
/// Used for input gradients (`dX += dY * W^T`); the transpose is materialised
/// once so the fast kernel path is reused.
pub fn gemm_nt_acc(m: usize, n: usize, j: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * n, "gemm_nt_acc: lhs size");
    assert_eq!(b.len(), j * n, "gemm_nt_acc: rhs size");
    assert_eq!(c.len(), m * j, "gemm_nt_acc: out size");
    let bt = transpose(j, n, b); // [n, j]
    let mut tmp = vec![0.0f64; m * j];
    gemm_nn(m, n, j, a, &bt, &mut tmp);
    for (cv, tv) in c.iter_mut().zip(&tmp) {
        *cv += tv;
    }
}

/// `c += a^T * b` with `a: [m,k]`, `b: [m,n]`, `c: [k,n]`, row-major.
/// Used for weight gradients (`dW += X^T dY`). Accumulates.
pub fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert_eq!(a.len(), m * k, "gemm_tn_acc: lhs size");
    assert_eq!(b.len(), m * n, "gemm_tn_acc: rhs size");
    assert_eq!(c.len(), k * n, "gemm_tn_acc: out size");
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // Partition output rows (k dimension) across tasks; every task scans all
    // of a and b but owns its C rows, keeping accumulation order fixed.
    let k_per_task = 16.min(k).max(1);
    for_each_chunk_mut(c, k_per_task * n, |task, c_blk| {
        let k0 = task * k_per_task;
        let krows = c_blk.len() / n;
        for i in 0..m {
            let brow = &b[i * n..i * n + n];
            for kk in 0..krows {
                let av = a[i * k + k0 + kk];
                if av != 0.0 {
                    let crow = &mut c_blk[kk * n..kk * n + n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv = av.mul_add(bv, *cv);
                    }
                }
            }
        }
    });
}

/// Row-major transpose: `a: [rows, cols]` -> `[cols, rows]`.
pub fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    let mut out = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Reference triple loop, kept as the oracle for the fast kernels.
pub fn gemm_nn_naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for kk in 0..k {
                s += a[i * k + kk] * b[kk * n + j];
            }
            c[i * n + j] = s;
        }
    }
}
