//! IIR filter design (notch, Butterworth high-pass) and zero-phase
//! forward-backward application.

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One second-order IIR section with a0 normalized to 1:
/// y[n] = b0·x[n] + b1·x[n−1] + b2·x[n−2] − a1·y[n−1] − a2·y[n−2].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiquadSection {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl BiquadSection {
    /// Jury stability test for a quadratic denominator: both poles lie
    /// strictly inside the unit circle iff |a2| < 1 and |a1| < 1 + a2.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }
}

/// Cascade of second-order sections applied in series.
#[derive(Clone, Debug, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<BiquadSection>,
}

impl BiquadCascade {
    fn checked(sections: Vec<BiquadSection>) -> Result<Self> {
        if let Some(bad) = sections.iter().find(|s| !s.is_stable()) {
            return Err(Error::InvalidArgument(format!(
                "designed filter section is unstable: {bad:?}"
            )));
        }
        Ok(Self { sections })
    }

    /// Total filter order (2 per section).
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Magnitude of the frequency response at `f_hz` for sample rate
    /// `fs_hz`, evaluated as |H(e^{jω})| over the cascade.
    pub fn magnitude_at(&self, f_hz: f64, fs_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * f_hz / fs_hz;
        let (zr, zi) = (w.cos(), -w.sin()); // z⁻¹ = e^{-jω}
        let mut mag = 1.0;
        for s in &self.sections {
            // Evaluate numerator and denominator at z⁻¹ via Horner steps.
            let (z2r, z2i) = (zr * zr - zi * zi, 2.0 * zr * zi);
            let num_r = s.b0 + s.b1 * zr + s.b2 * z2r;
            let num_i = s.b1 * zi + s.b2 * z2i;
            let den_r = 1.0 + s.a1 * zr + s.a2 * z2r;
            let den_i = s.a1 * zi + s.a2 * z2i;
            mag *= (num_r * num_r + num_i * num_i).sqrt()
                / (den_r * den_r + den_i * den_i).sqrt();
        }
        mag
    }
}

fn check_band(f_hz: f64, fs_hz: f64, what: &str) -> Result<()> {
    if fs_hz <= 0.0 {
        return Err(Error::Range {
            what: "sample rate".into(),
            value: fs_hz,
            limit: "> 0".into(),
        });
    }
    if !(f_hz > 0.0 && f_hz < fs_hz / 2.0) {
        return Err(Error::Range {
            what: what.into(),
            value: f_hz,
            limit: format!("within (0, {}) (below Nyquist)", fs_hz / 2.0),
        });
    }
    Ok(())
}

/// Second-order notch at `f0_hz`: unit gain at DC and Nyquist, a zero pair
/// on the unit circle at ±ω0. Larger `q_factor` narrows the stopband.
pub fn design_notch(f0_hz: f64, fs_hz: f64, q_factor: f64) -> Result<BiquadCascade> {
    check_band(f0_hz, fs_hz, "notch frequency")?;
    if q_factor <= 0.0 {
        return Err(Error::Range {
            what: "notch quality factor".into(),
            value: q_factor,
            limit: "> 0".into(),
        });
    }
    let w0 = 2.0 * std::f64::consts::PI * f0_hz / fs_hz;
    let alpha = w0.sin() / (2.0 * q_factor);
    let a0 = 1.0 + alpha;
    BiquadCascade::checked(vec![BiquadSection {
        b0: 1.0 / a0,
        b1: -2.0 * w0.cos() / a0,
        b2: 1.0 / a0,
        a1: -2.0 * w0.cos() / a0,
        a2: (1.0 - alpha) / a0,
    }])
}

/// Butterworth high-pass of even `order` with cutoff `fc_hz` (−3 dB point
/// of the cascade). Each conjugate pole pair of the analog prototype is
/// mapped LP→HP and discretized by the bilinear transform with the cutoff
/// pre-warped, so the −3 dB point lands exactly on `fc_hz`.
pub fn design_butter_highpass(order: usize, fc_hz: f64, fs_hz: f64) -> Result<BiquadCascade> {
    if order < 2 || order % 2 != 0 {
        return Err(Error::Unsupported(format!(
            "Butterworth design implemented for even order ≥ 2, got {order}"
        )));
    }
    check_band(fc_hz, fs_hz, "high-pass cutoff")?;
    let k = 2.0 * fs_hz;
    let wc = k * (std::f64::consts::PI * fc_hz / fs_hz).tan(); // pre-warped analog cutoff
    let n = order as f64;
    let mut sections = Vec::with_capacity(order / 2);
    for pair in 0..order / 2 {
        // Analog prototype pole angle; −2·Re(pole) of the normalized
        // low-pass pair is the section damping coefficient.
        let theta = std::f64::consts::PI * (2.0 * pair as f64 + 1.0) / (2.0 * n);
        let damp = 2.0 * theta.sin();
        // Analog HP section s²/(s² + damp·ωc·s + ωc²) through s = k(z−1)/(z+1).
        let k2 = k * k;
        let d0 = k2 + damp * wc * k + wc * wc;
        sections.push(BiquadSection {
            b0: k2 / d0,
            b1: -2.0 * k2 / d0,
            b2: k2 / d0,
            a1: (2.0 * wc * wc - 2.0 * k2) / d0,
            a2: (k2 - damp * wc * k + wc * wc) / d0,
        });
    }
    BiquadCascade::checked(sections)
}

/// Forward-backward filtering of each channel of `x`: [T×c], giving zero
/// phase and the squared magnitude response. Edges are handled by
/// reflecting the first/last samples over a pad of 3 × filter order.
pub fn filt_zero_phase(filter: &BiquadCascade, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "filt_zero_phase expects [samples × channels], got shape {:?}",
            x.shape()
        )));
    }
    let (t, c) = (x.dim(0), x.dim(1));
    let pad = 3 * filter.order();
    if t <= pad {
        return Err(Error::InvalidArgument(format!(
            "signal of {t} samples is too short for zero-phase filtering \
             (needs more than 3 × order = {pad})"
        )));
    }
    let mut out = vec![0.0; t * c];
    let mut work = vec![0.0; t + 2 * pad];
    for ch in 0..c {
        // Reflective padding: x[pad], …, x[1] | x[0..t] | x[t−2], …
        for i in 0..pad {
            work[i] = x.values()[(pad - i) * c + ch];
            work[pad + t + i] = x.values()[(t - 2 - i) * c + ch];
        }
        for i in 0..t {
            work[pad + i] = x.values()[i * c + ch];
        }
        for s in &filter.sections {
            run_biquad(s, &mut work);
        }
        work.reverse();
        for s in &filter.sections {
            run_biquad(s, &mut work);
        }
        work.reverse();
        for i in 0..t {
            out[i * c + ch] = work[pad + i];
        }
    }
    Tensor::new(out, &[t, c])
}

/// In-place direct-form-II-transposed biquad pass, zero initial state.
fn run_biquad(s: &BiquadSection, x: &mut [f64]) {
    let (mut z1, mut z2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let xin = *v;
        let y = s.b0 * xin + z1;
        z1 = s.b1 * xin - s.a1 * y + z2;
        z2 = s.b2 * xin - s.a2 * y;
        *v = y;
    }
}
