//! Sample-rate conversion by linear interpolation.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Resamples every channel of `x`: [T×n] from `fs_in` to `fs_out` Hz by
/// linear interpolation on the original time grid. The output has
/// T' = round(T · fs_out / fs_in) samples; positions past the last input
/// sample hold its value.
pub fn resample_linear(x: &Tensor, fs_in: f64, fs_out: f64) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "resample_linear expects [samples × channels], got shape {:?}",
            x.shape()
        )));
    }
    for (name, fs) in [("input rate", fs_in), ("output rate", fs_out)] {
        if !(fs > 0.0) {
            return Err(Error::Range {
                what: name.into(),
                value: fs,
                limit: "> 0".into(),
            });
        }
    }
    let (t, n) = (x.dim(0), x.dim(1));
    if fs_in == fs_out {
        return Ok(x.clone());
    }
    let t_out = ((t as f64) * fs_out / fs_in).round() as usize;
    let ratio = fs_in / fs_out;
    let mut out = vec![0.0; t_out * n];
    for i in 0..t_out {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        let row = &mut out[i * n..(i + 1) * n];
        if i0 + 1 >= t {
            row.copy_from_slice(&x.values()[(t - 1) * n..t * n]);
        } else {
            let frac = pos - i0 as f64;
            let a = &x.values()[i0 * n..(i0 + 1) * n];
            let b = &x.values()[(i0 + 1) * n..(i0 + 2) * n];
            for (j, o) in row.iter_mut().enumerate() {
                *o = a[j] + frac * (b[j] - a[j]);
            }
        }
    }
    Tensor::new(out, &[t_out, n])
}
