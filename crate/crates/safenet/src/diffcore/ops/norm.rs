//! Batch normalization over feature channels.

use crate::diffcore::kernels::axpy;
use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::{debug_check_finite, Tensor};
use crate::error::{shape_mismatch, Error, Result};

/// Per-channel running mean/variance carried by a batch-norm layer across
/// training steps and used verbatim in eval mode.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            var: vec![1.0; d],
        }
    }
}

/// Normalizes the trailing axis of `x` (all leading axes are flattened to
/// rows, so a [B×t×d] activation is normalized over B·t samples per
/// channel). Training mode uses batch statistics and folds them into
/// `running` with keep-factor `momentum`; eval mode applies `running` as a
/// frozen affine map.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm(
    tape: &Tape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running: &mut RunningStats,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    if x.rank() < 1 {
        return Err(Error::InvalidArgument(
            "batch_norm requires at least one axis".into(),
        ));
    }
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(shape_mismatch("batch_norm params", &[d], gamma.shape()));
    }
    if running.mean.len() != d || running.var.len() != d {
        return Err(shape_mismatch(
            "batch_norm running stats",
            &[d],
            &[running.mean.len()],
        ));
    }
    let rows = x.numel() / d;
    if rows == 0 {
        return Err(Error::EmptyInput("batch_norm".into()));
    }

    let (mean, var) = if training {
        let mut mean = vec![0.0; d];
        for row in x.values().chunks(d) {
            axpy(1.0, row, &mut mean);
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; d];
        for row in x.values().chunks(d) {
            for (j, &v) in row.iter().enumerate() {
                let c = v - mean[j];
                var[j] += c * c;
            }
        }
        for v in var.iter_mut() {
            *v /= rows as f64;
        }
        // Running stats use the unbiased variance when a correction exists.
        let correction = if rows > 1 {
            rows as f64 / (rows - 1) as f64
        } else {
            1.0
        };
        for j in 0..d {
            running.mean[j] = momentum * running.mean[j] + (1.0 - momentum) * mean[j];
            running.var[j] = momentum * running.var[j] + (1.0 - momentum) * var[j] * correction;
        }
        (mean, var)
    } else {
        (running.mean.clone(), running.var.clone())
    };

    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.numel()];
    let mut vals = vec![0.0; x.numel()];
    for (r, row) in x.values().chunks(d).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean[j]) * inv_std[j];
            x_hat[r * d + j] = h;
            vals[r * d + j] = gamma.values()[j] * h + beta.values()[j];
        }
    }
    debug_check_finite("batch_norm", &vals, &[x, gamma, beta]);
    let out = Tensor::build(vals, x.shape(), false);

    let (tx, tg, tb) = (tape.tracks(x), tape.tracks(gamma), tape.tracks(beta));
    if tx || tg || tb {
        let (x, gamma, beta, out_id) = (x.clone(), gamma.clone(), beta.clone(), out.id());
        tape.record(&out, move |g| {
            let Some(dy) = g.take_output(out_id) else { return };
            if tb {
                g.accumulate(beta.id(), d, |buf| {
                    for row in dy.chunks(d) {
                        axpy(1.0, row, buf);
                    }
                });
            }
            if tg {
                g.accumulate(gamma.id(), d, |buf| {
                    for (r, row) in dy.chunks(d).enumerate() {
                        for (j, &dv) in row.iter().enumerate() {
                            buf[j] += dv * x_hat[r * d + j];
                        }
                    }
                });
            }
            if tx {
                if training {
                    // Batch statistics depend on x, so the gradient couples
                    // all rows of each channel:
                    // dx = γ·inv_std·(dy − mean(dy) − x̂·mean(dy ⊙ x̂)).
                    let mut sum_dy = vec![0.0; d];
                    let mut sum_dy_xhat = vec![0.0; d];
                    for (r, row) in dy.chunks(d).enumerate() {
                        for (j, &dv) in row.iter().enumerate() {
                            sum_dy[j] += dv;
                            sum_dy_xhat[j] += dv * x_hat[r * d + j];
                        }
                    }
                    g.accumulate(x.id(), x.numel(), |buf| {
                        let n = rows as f64;
                        for (r, row) in buf.chunks_mut(d).enumerate() {
                            for (j, o) in row.iter_mut().enumerate() {
                                let centered = dy[r * d + j]
                                    - sum_dy[j] / n
                                    - x_hat[r * d + j] * sum_dy_xhat[j] / n;
                                *o += gamma.values()[j] * inv_std[j] * centered;
                            }
                        }
                    });
                } else {
                    g.accumulate(x.id(), x.numel(), |buf| {
                        for (r, row) in buf.chunks_mut(d).enumerate() {
                            for (j, o) in row.iter_mut().enumerate() {
                                *o += dy[r * d + j] * gamma.values()[j] * inv_std[j];
                            }
                        }
                    });
                }
            }
        });
    }
    Ok(out)
}
