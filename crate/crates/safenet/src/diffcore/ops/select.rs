//! Row selection and re-assembly operations used by the sparse-attention
//! routing: gathering active rows, concatenating per-sample results, and
//! rebuilding a full sequence from active rows plus a shared fill row.

use crate::diffcore::kernels::axpy;
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::{shape_mismatch, Error, Result};

/// Copies rows `idx` of a 2-D tensor into a new [len(idx)×c] tensor.
/// Backward scatter-adds gradient rows back to their sources; a row picked
/// twice accumulates twice.
pub fn gather_rows(tape: &Tape, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "gather_rows expects a 2-D tensor, got shape {:?}",
            x.shape()
        )));
    }
    let (r, c) = (x.dim(0), x.dim(1));
    if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
        return Err(Error::Range {
            what: "row index".into(),
            value: bad as f64,
            limit: format!("< {r}"),
        });
    }
    let mut vals = vec![0.0; idx.len() * c];
    for (dst, &i) in vals.chunks_mut(c).zip(idx) {
        dst.copy_from_slice(&x.values()[i * c..(i + 1) * c]);
    }
    let out = Tensor::build(vals, &[idx.len(), c], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        let idx = idx.to_vec();
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                for (row, &i) in dy.chunks(c).zip(&idx) {
                    axpy(1.0, row, &mut buf[i * c..(i + 1) * c]);
                }
            });
        });
    }
    Ok(out)
}

/// Stacks 2-D tensors with equal column counts along the row axis.
pub fn concat_rows(tape: &Tape, parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::EmptyInput("concat_rows".into()))?;
    if first.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "concat_rows expects 2-D tensors, got shape {:?}",
            first.shape()
        )));
    }
    let c = first.dim(1);
    let mut rows = 0;
    for p in parts {
        if p.rank() != 2 || p.dim(1) != c {
            return Err(shape_mismatch("concat_rows", first.shape(), p.shape()));
        }
        rows += p.dim(0);
    }
    let mut vals = Vec::with_capacity(rows * c);
    for p in parts {
        vals.extend_from_slice(p.values());
    }
    let out = Tensor::build(vals, &[rows, c], false);
    let tracked: Vec<bool> = parts.iter().map(|p| tape.tracks(p)).collect();
    if tracked.iter().any(|&t| t) {
        let parts = parts.to_vec();
        let out_id = out.id();
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            let mut offset = 0;
            for (p, &t) in parts.iter().zip(&tracked) {
                let n = p.numel();
                if t {
                    let seg = &dy[offset..offset + n];
                    g.accumulate(p.id(), n, |buf| axpy(1.0, seg, buf));
                }
                offset += n;
            }
        });
    }
    Ok(out)
}

/// Builds an [n_rows×c] tensor whose rows at `active_idx` come from
/// `active` (row i of `active` lands at `active_idx[i]`) and whose
/// remaining rows are all `fill`. Indices must be unique and in range.
pub fn assemble_rows(
    tape: &Tape,
    n_rows: usize,
    active_idx: &[usize],
    active: &Tensor,
    fill: &Tensor,
) -> Result<Tensor> {
    if active.rank() != 2 || fill.rank() != 1 || active.dim(1) != fill.dim(0) {
        return Err(shape_mismatch("assemble_rows", active.shape(), fill.shape()));
    }
    if active.dim(0) != active_idx.len() {
        return Err(Error::InvalidArgument(format!(
            "assemble_rows got {} indices for {} active rows",
            active_idx.len(),
            active.dim(0)
        )));
    }
    let c = fill.dim(0);
    let mut is_active = vec![false; n_rows];
    for &i in active_idx {
        if i >= n_rows {
            return Err(Error::Range {
                what: "row index".into(),
                value: i as f64,
                limit: format!("< {n_rows}"),
            });
        }
        if is_active[i] {
            return Err(Error::InvalidArgument(format!(
                "assemble_rows index {i} appears twice"
            )));
        }
        is_active[i] = true;
    }
    let mut vals = vec![0.0; n_rows * c];
    for row in vals.chunks_mut(c) {
        row.copy_from_slice(fill.values());
    }
    for (src, &i) in active.values().chunks(c).zip(active_idx) {
        vals[i * c..(i + 1) * c].copy_from_slice(src);
    }
    debug_check_finite("assemble_rows", &vals, &[active, fill]);
    let out = Tensor::build(vals, &[n_rows, c], false);
    let (ta, tf) = (tape.tracks(active), tape.tracks(fill));
    if ta || tf {
        let (active, fill, out_id) = (active.clone(), fill.clone(), out.id());
        let idx = active_idx.to_vec();
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                g.accumulate(active.id(), active.numel(), |buf| {
                    for (dst, &i) in buf.chunks_mut(c).zip(&idx) {
                        axpy(1.0, &dy[i * c..(i + 1) * c], dst);
                    }
                });
            }
            if tf {
                g.accumulate(fill.id(), c, |buf| {
                    for (i, row) in dy.chunks(c).enumerate() {
                        if !is_active[i] {
                            axpy(1.0, row, buf);
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}
