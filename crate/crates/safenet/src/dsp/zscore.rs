//! Per-channel Z-score standardization with train-split statistics.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const STD_GUARD: f64 = 1e-8;

/// Per-channel mean and standard deviation, fitted on the training
/// partition only and then applied unchanged to every split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Fits mean and (population) standard deviation per trailing-axis
    /// channel; all leading axes are flattened to rows.
    pub fn fit(x: &Tensor) -> Result<Self> {
        if x.rank() < 1 || x.numel() == 0 {
            return Err(Error::EmptyInput("channel statistics".into()));
        }
        let c = *x.shape().last().unwrap();
        let rows = x.numel() / c;
        let mut mean = vec![0.0; c];
        for row in x.values().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; c];
        for row in x.values().chunks(c) {
            for (j, v) in row.iter().enumerate() {
                let d = v - mean[j];
                var[j] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / rows as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// (x − mean) / (std + 1e-8), channel-wise over the trailing axis.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let c = self.channels();
        let vals = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % c]) / (self.std[i % c] + STD_GUARD))
            .collect();
        Tensor::new(vals, x.shape())
    }

    /// Inverse transform back to original units: y·(std + 1e-8) + mean.
    pub fn invert(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y)?;
        let c = self.channels();
        let vals = y
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (self.std[i % c] + STD_GUARD) + self.mean[i % c])
            .collect();
        Tensor::new(vals, y.shape())
    }

    /// Inverse transform of a single channel's scalar value.
    pub fn invert_channel(&self, channel: usize, v: f64) -> f64 {
        v * (self.std[channel] + STD_GUARD) + self.mean[channel]
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.rank() < 1 || *x.shape().last().unwrap() != self.channels() {
            return Err(Error::ShapeMismatch {
                context: "zscore".into(),
                lhs: vec![self.channels()],
                rhs: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}
