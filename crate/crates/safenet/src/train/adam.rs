//! Adam optimizer with bias correction, keyed by parameter name so the
//! moment buffers survive the tensor replacement that each update
//! performs.

use std::collections::BTreeMap;

use crate::diffcore::{Gradients, Tensor};
use crate::error::{Error, Result};
use crate::model::SafeNet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for every parameter, plus the
/// shared step counter.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
    t: u64,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update to every parameter.
    /// Parameters without a recorded gradient receive a zero gradient,
    /// so their moments decay but a fresh optimizer leaves them alone.
    pub fn step(&mut self, net: &mut SafeNet, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Range {
                what: "learning rate".into(),
                value: lr,
                limit: "> 0 and finite".into(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (name, p) in net.params_mut() {
            let n = p.numel();
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            if m.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "optimizer state holds {} values for a parameter of {n}",
                    m.len()
                )));
            }
            let g = grads.wrt_or_zeros(p);
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                next.push(p.values()[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
            }
            *p = Tensor::param(next, p.shape())?;
        }
        Ok(())
    }
}
