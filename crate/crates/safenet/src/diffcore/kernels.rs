//! Raw dense numeric kernels shared by the differentiable operations.
//!
//! Every kernel writes each output row from exactly one task, so results
//! are bit-identical regardless of the number of worker threads.

use rayon::prelude::*;

/// Minimum output size before a kernel fans out to the rayon pool.
const PAR_MIN_ELEMS: usize = 16 * 1024;

/// `y += alpha * x`, element-wise.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// C[rows×cols] = A[rows×shared] · B[shared×cols], ikj loop order so the
/// inner loop runs over contiguous slices of B and C.
pub(crate) fn mm(a: &[f64], b: &[f64], rows: usize, shared: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), rows * shared);
    debug_assert_eq!(b.len(), shared * cols);
    let mut out = vec![0.0; rows * cols];
    let row_product = |i: usize, out_row: &mut [f64]| {
        let a_row = &a[i * shared..(i + 1) * shared];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * cols..(p + 1) * cols];
            axpy(a_ip, b_row, out_row);
        }
    };
    if rows * cols >= PAR_MIN_ELEMS && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(cols)
            .with_min_len(8)
            .enumerate()
            .for_each(|(i, row)| row_product(i, row));
    } else {
        for (i, row) in out.chunks_mut(cols).enumerate() {
            row_product(i, row);
        }
    }
    out
}

/// Out[cols×rows] = Xᵀ for X[rows×cols].
pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * cols);
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// C[rows×cols] = A · Bᵀ where A is [rows×shared] and B is [cols×shared].
pub(crate) fn mm_nt(a: &[f64], b: &[f64], rows: usize, shared: usize, cols: usize) -> Vec<f64> {
    let bt = transpose(b, cols, shared);
    mm(a, &bt, rows, shared, cols)
}

/// C[rows×cols] = Aᵀ · B where A is [shared×rows] and B is [shared×cols].
pub(crate) fn mm_tn(a: &[f64], b: &[f64], rows: usize, shared: usize, cols: usize) -> Vec<f64> {
    let at = transpose(a, shared, rows);
    mm(&at, b, rows, shared, cols)
}
