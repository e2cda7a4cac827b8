//! Element-wise differentiable operations.

use crate::diffcore::kernels::axpy;
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::Result;

/// `a + b`, element-wise; shapes must match exactly.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "add")?;
    let vals: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x + y).collect();
    debug_check_finite("add", &vals, &[a, b]);
    let out = Tensor::build(vals, a.shape(), false);
    let (ta, tb) = (tape.tracks(a), tape.tracks(b));
    if ta || tb {
        let (a, b, out_id) = (a.clone(), b.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                g.accumulate(a.id(), a.numel(), |buf| axpy(1.0, &dy, buf));
            }
            if tb {
                g.accumulate(b.id(), b.numel(), |buf| axpy(1.0, &dy, buf));
            }
        });
    }
    Ok(out)
}

/// `a - b`, element-wise; shapes must match exactly.
pub fn sub(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "sub")?;
    let vals: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    debug_check_finite("sub", &vals, &[a, b]);
    let out = Tensor::build(vals, a.shape(), false);
    let (ta, tb) = (tape.tracks(a), tape.tracks(b));
    if ta || tb {
        let (a, b, out_id) = (a.clone(), b.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                g.accumulate(a.id(), a.numel(), |buf| axpy(1.0, &dy, buf));
            }
            if tb {
                g.accumulate(b.id(), b.numel(), |buf| axpy(-1.0, &dy, buf));
            }
        });
    }
    Ok(out)
}

/// `a ⊙ b`, element-wise product; shapes must match exactly.
pub fn mul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.check_same_shape(b, "mul")?;
    let vals: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect();
    debug_check_finite("mul", &vals, &[a, b]);
    let out = Tensor::build(vals, a.shape(), false);
    let (ta, tb) = (tape.tracks(a), tape.tracks(b));
    if ta || tb {
        let (a, b, out_id) = (a.clone(), b.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if ta {
                g.accumulate(a.id(), a.numel(), |buf| {
                    for ((o, d), bv) in buf.iter_mut().zip(&dy).zip(b.values()) {
                        *o += d * bv;
                    }
                });
            }
            if tb {
                g.accumulate(b.id(), b.numel(), |buf| {
                    for ((o, d), av) in buf.iter_mut().zip(&dy).zip(a.values()) {
                        *o += d * av;
                    }
                });
            }
        });
    }
    Ok(out)
}

/// `a * s` for a constant scalar `s`.
pub fn scale(tape: &Tape, a: &Tensor, s: f64) -> Tensor {
    let vals: Vec<f64> = a.values().iter().map(|x| x * s).collect();
    debug_check_finite("scale", &vals, &[a]);
    let out = Tensor::build(vals, a.shape(), false);
    if tape.tracks(a) {
        let (a, out_id) = (a.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(a.id(), a.numel(), |buf| axpy(s, &dy, buf));
        });
    }
    out
}

/// `max(a, 0)`, element-wise; the subgradient at 0 is taken as 0.
pub fn relu(tape: &Tape, a: &Tensor) -> Tensor {
    let vals: Vec<f64> = a.values().iter().map(|x| x.max(0.0)).collect();
    let out = Tensor::build(vals, a.shape(), false);
    if tape.tracks(a) {
        let (a, out_id) = (a.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(a.id(), a.numel(), |buf| {
                for ((o, d), x) in buf.iter_mut().zip(&dy).zip(a.values()) {
                    if *x > 0.0 {
                        *o += d;
                    }
                }
            });
        });
    }
    out
}

/// Logistic sigmoid, computed in the numerically stable branch form.
pub fn sigmoid(tape: &Tape, a: &Tensor) -> Tensor {
    let vals: Vec<f64> = a.values().iter().map(|&x| stable_sigmoid(x)).collect();
    debug_check_finite("sigmoid", &vals, &[a]);
    let out = Tensor::build(vals, a.shape(), false);
    if tape.tracks(a) {
        let (a, y, out_id) = (a.clone(), out.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            g.accumulate(a.id(), a.numel(), |buf| {
                for ((o, d), s) in buf.iter_mut().zip(&dy).zip(y.values()) {
                    *o += d * s * (1.0 - s);
                }
            });
        });
    }
    out
}

#[inline]
pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
