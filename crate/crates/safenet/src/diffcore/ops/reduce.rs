//! Reductions, softmax, and the cross-entropy loss kernel.

use crate::diffcore::kernels::axpy;
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::{Error, Result};

/// Sum of all elements, as a rank-0 tensor.
pub fn sum_all(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.values().iter().sum();
    let out = Tensor::build(vec![s], &[], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                for o in buf.iter_mut() {
                    *o += dy[0];
                }
            });
        });
    }
    out
}

/// Arithmetic mean of all elements, as a rank-0 tensor.
pub fn mean_all(tape: &Tape, x: &Tensor) -> Tensor {
    let n = x.numel() as f64;
    let s: f64 = x.values().iter().sum();
    let out = Tensor::build(vec![s / n], &[], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            let d = dy[0] / n;
            g.accumulate(x.id(), x.numel(), |buf| {
                for o in buf.iter_mut() {
                    *o += d;
                }
            });
        });
    }
    out
}

/// Column means of a 2-D tensor: [r×c] → [c].
pub fn mean_rows(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "mean_rows expects a 2-D tensor, got shape {:?}",
            x.shape()
        )));
    }
    let (r, c) = (x.dim(0), x.dim(1));
    let mut vals = vec![0.0; c];
    for row in x.values().chunks(c) {
        axpy(1.0, row, &mut vals);
    }
    for v in vals.iter_mut() {
        *v /= r as f64;
    }
    let out = Tensor::build(vals, &[c], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                for row in buf.chunks_mut(c) {
                    axpy(1.0 / r as f64, &dy, row);
                }
            });
        });
    }
    Ok(out)
}

/// Mean over the middle (time) axis of a 3-D tensor: [B×t×d] → [B×d].
pub fn mean_time(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "mean_time expects a 3-D tensor, got shape {:?}",
            x.shape()
        )));
    }
    let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let mut vals = vec![0.0; b * d];
    for (bi, sample) in x.values().chunks(t * d).enumerate() {
        let acc = &mut vals[bi * d..(bi + 1) * d];
        for row in sample.chunks(d) {
            axpy(1.0, row, acc);
        }
        for v in acc.iter_mut() {
            *v /= t as f64;
        }
    }
    let out = Tensor::build(vals, &[b, d], false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                for (bi, sample) in buf.chunks_mut(t * d).enumerate() {
                    let dg = &dy[bi * d..(bi + 1) * d];
                    for row in sample.chunks_mut(d) {
                        axpy(1.0 / t as f64, dg, row);
                    }
                }
            });
        });
    }
    Ok(out)
}

/// Softmax over the last axis, computed with max-subtraction so arbitrarily
/// large finite inputs cannot overflow.
pub fn softmax(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::InvalidArgument(
            "softmax requires at least one axis".into(),
        ));
    }
    let l = *x.shape().last().unwrap();
    let mut vals = x.values().to_vec();
    for row in vals.chunks_mut(l) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    debug_check_finite("softmax", &vals, &[x]);
    let out = Tensor::build(vals, x.shape(), false);
    if tape.tracks(x) {
        let (x, y, out_id) = (x.clone(), out.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                // Per row: dx = y ⊙ (dy − ⟨dy, y⟩).
                for ((brow, drow), yrow) in buf
                    .chunks_mut(l)
                    .zip(dy.chunks(l))
                    .zip(y.values().chunks(l))
                {
                    let dot: f64 = drow.iter().zip(yrow).map(|(d, yv)| d * yv).sum();
                    for ((o, d), yv) in brow.iter_mut().zip(drow).zip(yrow) {
                        *o += yv * (d - dot);
                    }
                }
            });
        });
    }
    Ok(out)
}

/// Per-row inner products of two [r×c] tensors: out[i] = ⟨a_i, b_i⟩.
pub fn row_dot(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "row_dot")?;
    if a.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "row_dot expects 2-D tensors, got shape {:?}",
            a.shape()
        )));
    }
    let (r, c) = (a.dim(0), a.dim(1));
    let vals: Vec<f64> = a
        .values()
        .chunks(c)
        .zip(b.values().chunks(c))
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x * y).sum())
        .collect();
    debug_check_finite("row_dot", &vals, &[a, b]);
    let out = Tensor::build(vals, &[r], false);
    let (ta, tb) = (tape.tracks(a), tape.tracks(b));
    if ta || tb {
        let (a, b, out_id) = (a.clone(), b.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                g.accumulate(a.id(), a.numel(), |buf| {
                    for ((row, &d), src) in buf.chunks_mut(c).zip(&dy).zip(b.values().chunks(c)) {
                        axpy(d, src, row);
                    }
                });
            }
            if tb {
                g.accumulate(b.id(), b.numel(), |buf| {
                    for ((row, &d), src) in buf.chunks_mut(c).zip(&dy).zip(a.values().chunks(c)) {
                        axpy(d, src, row);
                    }
                });
            }
        });
    }
    Ok(out)
}

/// Mean cross-entropy of logits [B×C] against integer class labels,
/// computed through log-sum-exp.
pub fn cross_entropy_mean(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy expects 2-D logits, got shape {:?}",
            logits.shape()
        )));
    }
    let (b, c) = (logits.dim(0), logits.dim(1));
    if labels.len() != b {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy got {} labels for {} rows",
            labels.len(),
            b
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Range {
            what: "class label".into(),
            value: bad as f64,
            limit: format!("< {c}"),
        });
    }
    let mut probs = vec![0.0; b * c];
    let mut total = 0.0;
    for (i, row) in logits.values().chunks(c).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[i * c + j] = e;
            s += e;
        }
        for p in &mut probs[i * c..(i + 1) * c] {
            *p /= s;
        }
        let lse = m + s.ln();
        total += lse - row[labels[i]];
    }
    let loss = total / b as f64;
    debug_check_finite("cross_entropy", &[loss], &[logits]);
    let out = Tensor::build(vec![loss], &[], false);
    if tape.tracks(logits) {
        let (logits, out_id) = (logits.clone(), out.id());
        let labels = labels.to_vec();
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            let d = dy[0] / b as f64;
            g.accumulate(logits.id(), logits.numel(), |buf| {
                for (i, row) in buf.chunks_mut(c).enumerate() {
                    for (j, o) in row.iter_mut().enumerate() {
                        let indicator = if j == labels[i] { 1.0 } else { 0.0 };
                        *o += d * (probs[i * c + j] - indicator);
                    }
                }
            });
        });
    }
    Ok(out)
}
