//! Batched 1-D convolution along the time axis, via im2col + matmul.

use crate::diffcore::kernels::{axpy, mm, mm_nt, mm_tn, transpose};
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::{shape_mismatch, Error, Result};

/// Padding behaviour of [`conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pad1d {
    /// Zero-pad both ends so the output has the input length; requires an
    /// odd kernel (centered taps, dilation 1).
    Same,
    /// Zero-pad the left end only so output position τ depends exclusively
    /// on input positions ≤ τ.
    Causal { dilation: usize },
}

impl Pad1d {
    /// Input time index read by tap `j` when producing output time `tau`,
    /// or None when the tap falls into the padding.
    #[inline]
    fn tap_index(self, tau: usize, j: usize, k: usize, t: usize) -> Option<usize> {
        let idx = match self {
            Pad1d::Same => tau as isize + j as isize - ((k - 1) / 2) as isize,
            Pad1d::Causal { dilation } => {
                tau as isize - ((k - 1 - j) * dilation) as isize
            }
        };
        (0..t as isize).contains(&idx).then_some(idx as usize)
    }
}

/// Convolution of `x`: [B×t×c_in] with kernel `w`: [c_out×c_in×k] and an
/// optional `[c_out]` bias, producing [B×t×c_out]. The whole batch is
/// lowered to a single (B·t)×(c_in·k) column matrix and one matmul.
pub fn conv1d(
    tape: &Tape,
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    pad: Pad1d,
) -> Result<Tensor> {
    if x.rank() != 3 || w.rank() != 3 || x.dim(2) != w.dim(1) {
        return Err(shape_mismatch("conv1d", x.shape(), w.shape()));
    }
    let (b, t, c_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, k) = (w.dim(0), w.dim(2));
    if x.numel() == 0 || w.numel() == 0 {
        return Err(Error::EmptyInput("conv1d".into()));
    }
    match pad {
        Pad1d::Same if k % 2 == 0 => {
            return Err(Error::InvalidArgument(format!(
                "same-padded conv1d requires an odd kernel, got {k}"
            )));
        }
        Pad1d::Causal { dilation: 0 } => {
            return Err(Error::InvalidArgument("conv1d dilation must be ≥ 1".into()));
        }
        _ => {}
    }
    if let Some(bb) = bias {
        if bb.shape() != [c_out] {
            return Err(shape_mismatch("conv1d bias", &[c_out], bb.shape()));
        }
    }

    let rows = b * t;
    let ck = c_in * k;
    let mut col = vec![0.0; rows * ck];
    for bi in 0..b {
        for tau in 0..t {
            let out_row = &mut col[(bi * t + tau) * ck..(bi * t + tau + 1) * ck];
            for j in 0..k {
                if let Some(ti) = pad.tap_index(tau, j, k, t) {
                    let src = &x.values()[(bi * t + ti) * c_in..(bi * t + ti + 1) * c_in];
                    for (ch, &v) in src.iter().enumerate() {
                        out_row[ch * k + j] = v;
                    }
                }
            }
        }
    }
    // Kernel reshaped so taps become matmul columns: w2[ch·k+j, o] = w[o, ch, j].
    let w2 = transpose(w.values(), c_out, ck);
    let mut vals = mm(&col, &w2, rows, ck, c_out);
    if let Some(bb) = bias {
        for row in vals.chunks_mut(c_out) {
            axpy(1.0, bb.values(), row);
        }
    }
    debug_check_finite("conv1d", &vals, &[x, w]);
    let out = Tensor::build(vals, &[b, t, c_out], false);

    let tx = tape.tracks(x);
    let tw = tape.tracks(w);
    let tb = bias.map(|bb| tape.tracks(bb)).unwrap_or(false);
    if tx || tw || tb {
        let (x, w, out_id) = (x.clone(), w.clone(), out.id());
        let bias = bias.cloned();
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if tb {
                let bb = bias.as_ref().unwrap();
                g.accumulate(bb.id(), c_out, |buf| {
                    for row in dy.chunks(c_out) {
                        axpy(1.0, row, buf);
                    }
                });
            }
            if tw {
                let dw2 = mm_tn(&col, &dy, ck, rows, c_out);
                let dw = transpose(&dw2, ck, c_out);
                g.accumulate(w.id(), w.numel(), |buf| axpy(1.0, &dw, buf));
            }
            if tx {
                let dcol = mm_nt(&dy, &w2, rows, c_out, ck);
                g.accumulate(x.id(), x.numel(), |buf| {
                    for bi in 0..b {
                        for tau in 0..t {
                            let drow = &dcol[(bi * t + tau) * ck..(bi * t + tau + 1) * ck];
                            for j in 0..k {
                                if let Some(ti) = pad.tap_index(tau, j, k, t) {
                                    let dst =
                                        &mut buf[(bi * t + ti) * c_in..(bi * t + ti + 1) * c_in];
                                    for (ch, o) in dst.iter_mut().enumerate() {
                                        *o += drow[ch * k + j];
                                    }
                                }
                            }
                        }
                    }
                });
            }
        });
    }
    Ok(out)
}
