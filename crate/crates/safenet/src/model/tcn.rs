//! Temporal convolutional blocks: causal dilated convolutions with a
//! rectifier between them and an optional residual connection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::ops::{add, conv1d, relu, reshape, Pad1d};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};

/// Geometry of the temporal convolution stack: one block per dilation
/// level, each block holding two causal convolutions at that dilation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TCNConfig {
    /// Feature channels d (input and output of every block).
    pub channels: usize,
    /// Kernel width.
    pub kernel: usize,
    /// Dilation per block, strictly increasing (e.g. [1, 2]).
    pub dilations: Vec<usize>,
    /// Add the block input back onto its output.
    pub residual: bool,
}

impl Default for TCNConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            kernel: 3,
            dilations: vec![1, 2],
            residual: true,
        }
    }
}

impl TCNConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument(
                "temporal convolution needs kernel ≥ 1 and channels ≥ 1".into(),
            ));
        }
        if self.dilations.is_empty() {
            return Err(Error::EmptyInput("temporal convolution dilations".into()));
        }
        if self.dilations.windows(2).any(|w| w[1] <= w[0]) || self.dilations[0] == 0 {
            return Err(Error::InvalidArgument(format!(
                "dilations must be strictly increasing and ≥ 1, got {:?}",
                self.dilations
            )));
        }
        Ok(())
    }

    /// Number of past samples (including the current one) a single
    /// output position can depend on.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|d| 2 * (self.kernel - 1) * d)
            .sum::<usize>()
    }
}

/// Weights of one block: two [d×d×k] causal kernels and their biases.
#[derive(Clone, Debug)]
pub struct TcnBlockWeights {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// Weights of the whole stack, one entry per dilation level.
#[derive(Clone, Debug)]
pub struct TcnWeights {
    pub blocks: Vec<TcnBlockWeights>,
}

/// Gain on each block's second convolution at initialization; the
/// residual branch starts small so stacked blocks begin near the
/// identity map and activation scale stays flat with depth.
pub const BLOCK_OUT_INIT_GAIN: f64 = 0.1;

impl TcnWeights {
    pub fn init(cfg: &TCNConfig, rng: &mut impl Rng) -> Self {
        let (d, k) = (cfg.channels, cfg.kernel);
        let bound = (3.0 / (d * k) as f64).sqrt();
        let blocks = cfg
            .dilations
            .iter()
            .map(|_| {
                let mut kernel = |b: f64| {
                    Tensor::param(
                        (0..d * d * k).map(|_| rng.gen_range(-b..b)).collect(),
                        &[d, d, k],
                    )
                    .expect("kernel")
                };
                TcnBlockWeights {
                    w1: kernel(bound),
                    b1: Tensor::param(vec![0.0; d], &[d]).expect("bias"),
                    w2: kernel(bound * BLOCK_OUT_INIT_GAIN),
                    b2: Tensor::param(vec![0.0; d], &[d]).expect("bias"),
                }
            })
            .collect();
        Self { blocks }
    }
}

/// Runs the causal stack on [t×d] or [B×t×d]; every output position τ
/// depends only on input positions ≤ τ.
pub fn tcn_forward(
    tape: &Tape,
    cfg: &TCNConfig,
    weights: &TcnWeights,
    x: &Tensor,
) -> Result<Tensor> {
    cfg.validate()?;
    if weights.blocks.len() != cfg.dilations.len() {
        return Err(Error::InvalidArgument(format!(
            "temporal stack has {} blocks for {} dilations",
            weights.blocks.len(),
            cfg.dilations.len()
        )));
    }
    if !matches!(x.rank(), 2 | 3) {
        return Err(Error::InvalidArgument(format!(
            "tcn_forward expects [t×d] or [B×t×d], got {:?}",
            x.shape()
        )));
    }
    let batched = x.rank() == 3;
    let (b, t) = if batched {
        (x.dim(0), x.dim(1))
    } else {
        (1, x.dim(0))
    };
    let mut h = reshape(tape, x, &[b, t, cfg.channels])?;
    for (block, &dilation) in weights.blocks.iter().zip(&cfg.dilations) {
        let pad = Pad1d::Causal { dilation };
        let inner = relu(
            tape,
            &conv1d(tape, &h, &block.w1, Some(&block.b1), pad)?,
        );
        let out = conv1d(tape, &inner, &block.w2, Some(&block.b2), pad)?;
        h = if cfg.residual { add(tape, &out, &h)? } else { out };
    }
    if batched {
        Ok(h)
    } else {
        reshape(tape, &h, &[t, cfg.channels])
    }
}
