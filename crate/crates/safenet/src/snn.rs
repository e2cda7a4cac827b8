//! Leaky integrate-and-fire neuron layer with hard reset.
//!
//! The membrane charges by explicit Euler with one simulation step per
//! input sample, fires a binary spike when the potential reaches the
//! threshold, and resets to a fixed value. The firing function is exactly
//! binary in the forward pass; training uses an arctan surrogate in place
//! of its (almost-everywhere-zero) true derivative.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};

/// Neuron parameters shared by a whole layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifConfig {
    /// Membrane time constant (dimensionless, in units of the sample step).
    pub tau: f64,
    /// Firing threshold; a spike is emitted when the charged potential
    /// reaches it (≥ comparison).
    pub v_threshold: f64,
    /// Resting potential the leak pulls toward.
    pub v_rest: f64,
    /// Potential assumed immediately after a spike (hard reset).
    pub v_reset: f64,
    /// Sharpness of the arctan surrogate derivative.
    pub surrogate_alpha: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            v_threshold: 0.3,
            v_rest: 0.0,
            v_reset: 0.0,
            surrogate_alpha: 2.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 1.0) {
            return Err(Error::Range {
                what: "membrane time constant".into(),
                value: self.tau,
                limit: "≥ 1".into(),
            });
        }
        if !(self.v_threshold > self.v_rest) {
            return Err(Error::InvalidArgument(format!(
                "firing threshold {} must exceed resting potential {}",
                self.v_threshold, self.v_rest
            )));
        }
        if !(self.v_reset < self.v_threshold) {
            return Err(Error::InvalidArgument(format!(
                "reset potential {} must stay below the firing threshold {}",
                self.v_reset, self.v_threshold
            )));
        }
        Ok(())
    }

    /// One Euler charging step: H = v + (x − (v − v_rest)) / τ.
    #[inline]
    fn charge(&self, v: f64, x: f64) -> f64 {
        v + (x - (v - self.v_rest)) / self.tau
    }
}

/// Per-unit membrane potentials carried across time steps.
#[derive(Clone, Debug)]
pub struct LifState {
    pub v: Tensor,
}

impl LifState {
    /// All units at the resting potential.
    pub fn resting(cfg: &LifConfig, shape: &[usize]) -> Self {
        Self {
            v: Tensor::full(shape, cfg.v_rest),
        }
    }
}

/// Single time step: charge, compare against the threshold, hard-reset.
/// Returns the binary spike tensor and the post-step state.
pub fn lif_step(cfg: &LifConfig, state: &LifState, x: &Tensor) -> Result<(Tensor, LifState)> {
    state.v.check_same_shape(x, "lif_step")?;
    let n = x.numel();
    let mut spikes = vec![0.0; n];
    let mut v_new = vec![0.0; n];
    for i in 0..n {
        let h = cfg.charge(state.v.values()[i], x.values()[i]);
        if h >= cfg.v_threshold {
            spikes[i] = 1.0;
            v_new[i] = cfg.v_reset;
        } else {
            v_new[i] = h;
        }
    }
    Ok((
        Tensor::build(spikes, x.shape(), false),
        LifState {
            v: Tensor::build(v_new, x.shape(), false),
        },
    ))
}

/// Applies [`lif_step`] along axis 0 of `x_seq` (time-major), starting from
/// the resting state. Output elements are exactly 0 or 1.
pub fn lif_sequence(cfg: &LifConfig, x_seq: &Tensor) -> Result<Tensor> {
    if x_seq.rank() < 1 {
        return Err(Error::InvalidArgument(
            "lif_sequence expects a time axis".into(),
        ));
    }
    let t = x_seq.dim(0);
    let units = if t == 0 { 0 } else { x_seq.numel() / t };
    let mut v = vec![cfg.v_rest; units];
    let mut spikes = vec![0.0; x_seq.numel()];
    for tau in 0..t {
        let xs = &x_seq.values()[tau * units..(tau + 1) * units];
        let out = &mut spikes[tau * units..(tau + 1) * units];
        for i in 0..units {
            let h = cfg.charge(v[i], xs[i]);
            if h >= cfg.v_threshold {
                out[i] = 1.0;
                v[i] = cfg.v_reset;
            } else {
                v[i] = h;
            }
        }
    }
    Ok(Tensor::build(spikes, x_seq.shape(), false))
}

/// Arctan surrogate for the firing derivative, evaluated at the
/// threshold-crossing distance u = H − v_threshold:
/// σ'(u) = α / (2·(1 + (π/2·α·u)²)).
#[inline]
pub fn surrogate_spike_grad(cfg: &LifConfig, u: f64) -> f64 {
    let a = cfg.surrogate_alpha;
    let s = std::f64::consts::FRAC_PI_2 * a * u;
    a / (2.0 * (1.0 + s * s))
}

/// Differentiable spiking layer over a batched sequence [B×t×d], with the
/// recurrence along axis 1. The forward pass is exactly binary; backward
/// propagates through time using the leak term, substitutes the arctan
/// surrogate for the firing function, and treats the reset mask as a
/// constant (gradients do not flow through the reset branch).
pub fn lif_over_time(tape: &Tape, cfg: &LifConfig, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::InvalidArgument(format!(
            "lif_over_time expects [batch × time × units], got shape {:?}",
            x.shape()
        )));
    }
    cfg.validate()?;
    let (b, t, d) = (x.dim(0), x.dim(1), x.dim(2));
    let mut h_all = vec![0.0; x.numel()];
    let mut spikes = vec![0.0; x.numel()];
    for bi in 0..b {
        let base = bi * t * d;
        let mut v = vec![cfg.v_rest; d];
        for tau in 0..t {
            let row = base + tau * d;
            for i in 0..d {
                let h = cfg.charge(v[i], x.values()[row + i]);
                h_all[row + i] = h;
                if h >= cfg.v_threshold {
                    spikes[row + i] = 1.0;
                    v[i] = cfg.v_reset;
                } else {
                    v[i] = h;
                }
            }
        }
    }
    let out = Tensor::build(spikes, x.shape(), false);
    if tape.tracks(x) {
        let (x, out_id) = (x.clone(), out.id());
        let cfg = *cfg;
        tape.record(&out, move |g| {
            let Some(ds) = g.take_output(out_id) else { return };
            g.accumulate(x.id(), x.numel(), |buf| {
                let leak = 1.0 - 1.0 / cfg.tau;
                for bi in 0..b {
                    let base = bi * t * d;
                    // dv carries the gradient flowing into the next step's
                    // membrane potential.
                    let mut dv = vec![0.0; d];
                    for tau in (0..t).rev() {
                        let row = base + tau * d;
                        for i in 0..d {
                            let h = h_all[row + i];
                            let fired = h >= cfg.v_threshold;
                            let mut dh =
                                ds[row + i] * surrogate_spike_grad(&cfg, h - cfg.v_threshold);
                            if !fired {
                                dh += dv[i];
                            }
                            buf[row + i] += dh / cfg.tau;
                            dv[i] = dh * leak;
                        }
                    }
                }
            });
        });
    }
    Ok(out)
}
