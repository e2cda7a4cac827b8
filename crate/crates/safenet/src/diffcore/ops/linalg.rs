//! Matrix products, broadcast additions, and shape manipulation.

use crate::diffcore::kernels::{axpy, mm, mm_nt, mm_tn, transpose};
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::{shape_mismatch, Error, Result};

/// `a · b` for 2-D operands; backward accumulates dA = dC·Bᵀ, dB = Aᵀ·dC.
pub fn matmul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return Err(shape_mismatch("matmul", a.shape(), b.shape()));
    }
    let (rows, shared, cols) = (a.dim(0), a.dim(1), b.dim(1));
    let vals = mm(a.values(), b.values(), rows, shared, cols);
    debug_check_finite("matmul", &vals, &[a, b]);
    let out = Tensor::build(vals, &[rows, cols], false);
    let (ta, tb) = (tape.tracks(a), tape.tracks(b));
    if ta || tb {
        let (a, b, out_id) = (a.clone(), b.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                let da = mm_nt(&dy, b.values(), rows, cols, shared);
                g.accumulate(a.id(), a.numel(), |buf| axpy(1.0, &da, buf));
            }
            if tb {
                let db = mm_tn(a.values(), &dy, shared, rows, cols);
                g.accumulate(b.id(), b.numel(), |buf| axpy(1.0, &db, buf));
            }
        });
    }
    Ok(out)
}

/// `x · w + bias` with `x` flattened to rows of length `w.dim(0)`; the
/// leading dimensions of `x` are preserved in the output. This is the
/// shared fully-connected primitive: a [B×t×k] activation multiplies a
/// [k×n] weight as one (B·t)×k product.
pub fn linear(tape: &Tape, x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if w.rank() != 2 || x.rank() < 1 {
        return Err(shape_mismatch("linear", x.shape(), w.shape()));
    }
    let k = w.dim(0);
    let n = w.dim(1);
    if x.numel() % k != 0 || *x.shape().last().unwrap() != k {
        return Err(shape_mismatch("linear", x.shape(), w.shape()));
    }
    let rows = x.numel() / k;
    let x2 = reshape(tape, x, &[rows, k])?;
    let mut y = matmul(tape, &x2, w)?;
    if let Some(b) = bias {
        if b.shape() != [n] {
            return Err(shape_mismatch("linear bias", &[n], b.shape()));
        }
        y = add_bcast(tape, &y, b)?;
    }
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = n;
    reshape(tape, &y, &out_shape)
}

/// `x + v` where `v`'s shape is a suffix of `x`'s shape; `v` is tiled over
/// the leading dimensions. Covers row-vector bias ([m×n] + [n]) and the
/// positional-encoding add ([B×t×d] + [t×d]).
pub fn add_bcast(tape: &Tape, x: &Tensor, v: &Tensor) -> Result<Tensor> {
    let suffix_ok = v.rank() <= x.rank()
        && x.shape()[x.rank() - v.rank()..] == *v.shape()
        && v.numel() > 0;
    if !suffix_ok {
        return Err(shape_mismatch("add_bcast", x.shape(), v.shape()));
    }
    let vn = v.numel();
    let mut vals = x.values().to_vec();
    for chunk in vals.chunks_mut(vn) {
        axpy(1.0, v.values(), chunk);
    }
    debug_check_finite("add_bcast", &vals, &[x, v]);
    let out = Tensor::build(vals, x.shape(), false);
    let (tx, tv) = (tape.tracks(x), tape.tracks(v));
    if tx || tv {
        let (x, v, out_id) = (x.clone(), v.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if tx {
                g.accumulate(x.id(), x.numel(), |buf| axpy(1.0, &dy, buf));
            }
            if tv {
                g.accumulate(v.id(), v.numel(), |buf| {
                    for chunk in dy.chunks(vn) {
                        axpy(1.0, chunk, buf);
                    }
                });
            }
        });
    }
    Ok(out)
}

/// [r×c] → [c×r].
pub fn transpose_2d(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "transpose_2d expects a matrix, got shape {:?}",
            x.shape()
        )));
    }
    let (r, c) = (x.dim(0), x.dim(1));
    let vals = transpose(x.values(), r, c);
    let out = Tensor::build(vals, &[c, r], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            let dx = transpose(&dy, c, r);
            g.accumulate(x.id(), x.numel(), |buf| axpy(1.0, &dx, buf));
        });
    }
    Ok(out)
}

/// Same values under a new shape; element count must be preserved.
pub fn reshape(tape: &Tape, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != x.numel() {
        return Err(Error::InvalidArgument(format!(
            "reshape from {:?} to {:?} changes element count",
            x.shape(),
            shape
        )));
    }
    if x.shape() == shape {
        return Ok(x.clone());
    }
    let out = Tensor::build(x.values().to_vec(), shape, false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| axpy(1.0, &dy, buf));
        });
    }
    Ok(out)
}
