//! Iterative feature decomposition: each stage passes the current
//! feature through an attention block, gates it with a learned weight
//! vector in (0,1), keeps the gated part as a meta-kinematic component,
//! and carries the residue into the next stage. The kinematic feature
//! is the sum of the gated parts; the biological feature is the final
//! residue, so the two always reassemble the input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{ssa_block_mode, AttentionMode, ProjectionWeights, SSAConfig};
use crate::diffcore::ops::{add, linear, mul, relu, reshape, sigmoid, sub, RunningStats};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};

/// Cascade geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SAFDConfig {
    /// Number of decomposition stages i.
    pub iterations: usize,
    /// Hidden width of the gating network W(·).
    pub weight_hidden: usize,
}

impl Default for SAFDConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            weight_hidden: 32,
        }
    }
}

impl SAFDConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Range {
                what: "decomposition iterations".into(),
                value: 0.0,
                limit: "≥ 1".into(),
            });
        }
        if self.weight_hidden == 0 {
            return Err(Error::Range {
                what: "gating hidden width".into(),
                value: 0.0,
                limit: "≥ 1".into(),
            });
        }
        Ok(())
    }
}

/// Learnable parameters of the cascade: one attention block and one
/// gating network, shared by every stage.
#[derive(Clone, Debug)]
pub struct SafdWeights {
    pub ssa: ProjectionWeights,
    /// Gating network W(·): d → hidden → d with sigmoid output.
    pub gate_w1: Tensor,
    pub gate_b1: Tensor,
    pub gate_w2: Tensor,
    pub gate_b2: Tensor,
}

impl SafdWeights {
    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mat = |rows: usize, cols: usize, rng: &mut dyn rand::RngCore| {
            let bound = (3.0 / rows as f64).sqrt();
            Tensor::param(
                (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
                &[rows, cols],
            )
            .expect("gate matrix")
        };
        Self {
            ssa: ProjectionWeights::init(d, rng),
            gate_w1: mat(d, hidden, rng),
            gate_b1: Tensor::param(vec![0.0; hidden], &[hidden]).expect("bias"),
            gate_w2: mat(hidden, d, rng),
            gate_b2: Tensor::param(vec![0.0; d], &[d]).expect("bias"),
        }
    }
}

/// Per-stage and aggregate features of one decomposition.
#[derive(Clone, Debug)]
pub struct DecompositionOutput {
    /// Kinematic feature: element-wise sum of the gated parts.
    pub f_k: Tensor,
    /// Biological feature: the final residue.
    pub f_b: Tensor,
    /// Gated (meta-kinematic) parts q_1..q_i.
    pub q_list: Vec<Tensor>,
    /// Residues r_1..r_i.
    pub r_list: Vec<Tensor>,
}

/// Gating network W(·): two fully-connected layers with a rectifier
/// between and a sigmoid at the output, so every gate lies in (0,1).
pub fn weight_module(tape: &Tape, w: &SafdWeights, p: &Tensor) -> Result<Tensor> {
    let h = relu(tape, &linear(tape, p, &w.gate_w1, Some(&w.gate_b1))?);
    Ok(sigmoid(tape, &linear(tape, &h, &w.gate_w2, Some(&w.gate_b2))?))
}

/// Runs the cascade on a feature vector [d] or a batch [B×d].
#[allow(clippy::too_many_arguments)]
pub fn safd_decompose(
    tape: &Tape,
    cfg: &SAFDConfig,
    ssa_cfg: &SSAConfig,
    w: &SafdWeights,
    bn: &mut RunningStats,
    x1: &Tensor,
    training: bool,
    mode: AttentionMode,
) -> Result<DecompositionOutput> {
    cfg.validate()?;
    if !matches!(x1.rank(), 1 | 2) {
        return Err(Error::InvalidArgument(format!(
            "safd_decompose expects [d] or [B×d], got {:?}",
            x1.shape()
        )));
    }
    let d = ssa_cfg.d_model;
    let batched = x1.rank() == 2;
    let b = if batched { x1.dim(0) } else { 1 };
    let mut x_s = reshape(tape, x1, &[b, d])?;
    let mut q_list = Vec::with_capacity(cfg.iterations);
    let mut r_list = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        // The attention block sees each feature vector as a length-1
        // sequence; batch norm still aggregates over the whole batch.
        let x3 = reshape(tape, &x_s, &[b, 1, d])?;
        let p3 = ssa_block_mode(tape, &x3, &w.ssa, ssa_cfg, bn, training, mode)?;
        let p_s = reshape(tape, &p3, &[b, d])?;
        let w_s = weight_module(tape, w, &p_s)?;
        let q_s = mul(tape, &w_s, &p_s)?;
        let r_s = sub(tape, &x_s, &q_s)?;
        q_list.push(q_s);
        r_list.push(r_s.clone());
        x_s = r_s;
    }
    let mut f_k = q_list[0].clone();
    for q in &q_list[1..] {
        f_k = add(tape, &f_k, q)?;
    }
    let f_b = r_list.last().expect("at least one stage").clone();
    let restore = |t: &Tensor| -> Result<Tensor> {
        if batched {
            Ok(t.clone())
        } else {
            reshape(tape, t, &[d])
        }
    };
    Ok(DecompositionOutput {
        f_k: restore(&f_k)?,
        f_b: restore(&f_b)?,
        q_list: q_list.iter().map(&restore).collect::<Result<_>>()?,
        r_list: r_list.iter().map(&restore).collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ssa_cfg(d: usize) -> SSAConfig {
        SSAConfig {
            d_model: d,
            ..SSAConfig::default()
        }
    }

    fn decompose(
        iterations: usize,
        x1: &Tensor,
        d: usize,
        seed: u64,
    ) -> DecompositionOutput {
        let tape = Tape::inference();
        let cfg = SAFDConfig {
            iterations,
            weight_hidden: 6,
        };
        let w = SafdWeights::init(d, 6, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut bn = RunningStats::new(d);
        safd_decompose(
            &tape,
            &cfg,
            &ssa_cfg(d),
            &w,
            &mut bn,
            x1,
            true,
            AttentionMode::Spiking,
        )
        .unwrap()
    }

    #[test]
    fn gated_parts_and_final_residue_reassemble_the_input() {
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for iters in [1usize, 2, 4] {
            for trial in 0..20 {
                let x1 = Tensor::from_fn(&[d], |_| rng.gen_range(-2.0..2.0));
                let out = decompose(iters, &x1, d, 900 + trial);
                assert_eq!(out.q_list.len(), iters);
                assert_eq!(out.r_list.len(), iters);
                for j in 0..d {
                    let total = out.f_k.values()[j] + out.f_b.values()[j];
                    assert!(
                        (total - x1.values()[j]).abs() < 1e-9,
                        "iter {iters}: reassembly off by {}",
                        (total - x1.values()[j]).abs()
                    );
                    let q_sum: f64 = out.q_list.iter().map(|q| q.values()[j]).sum();
                    assert!((out.f_k.values()[j] - q_sum).abs() < 1e-9);
                    assert_eq!(out.f_b.values()[j], out.r_list[iters - 1].values()[j]);
                }
            }
        }
    }

    #[test]
    fn single_stage_matches_hand_unrolling() {
        let d = 6;
        let tape = Tape::inference();
        let cfg = SAFDConfig {
            iterations: 1,
            weight_hidden: 5,
        };
        let w = SafdWeights::init(d, 5, &mut ChaCha8Rng::seed_from_u64(13));
        let x1 = Tensor::from_fn(&[d], |i| (i as f64 - 2.5) * 0.4);
        let mut bn = RunningStats::new(d);
        let out = safd_decompose(
            &tape,
            &cfg,
            &ssa_cfg(d),
            &w,
            &mut bn.clone(),
            &x1,
            true,
            AttentionMode::Spiking,
        )
        .unwrap();
        // Recompute the single stage from the public pieces.
        let p1 = crate::attention::ssa_block(
            &tape,
            &x1,
            &w.ssa,
            &ssa_cfg(d),
            &mut bn,
            true,
        )
        .unwrap();
        let w1 = weight_module(&tape, &w, &p1).unwrap();
        for j in 0..d {
            let q1 = w1.values()[j] * p1.values()[j];
            assert!((out.f_k.values()[j] - q1).abs() < 1e-12);
            assert!((out.f_b.values()[j] - (x1.values()[j] - q1)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gate_degenerates_to_identity_residue() {
        let d = 5;
        let tape = Tape::inference();
        let cfg = SAFDConfig {
            iterations: 3,
            weight_hidden: 4,
        };
        // Saturate the gate to ~0 with a very negative output bias.
        let mut w = SafdWeights::init(d, 4, &mut ChaCha8Rng::seed_from_u64(23));
        w.gate_b2 = Tensor::new(vec![-1e6; d], &[d]).unwrap();
        w.gate_w2 = Tensor::zeros(&[4, d]);
        let x1 = Tensor::from_fn(&[d], |i| 1.0 + i as f64);
        let mut bn = RunningStats::new(d);
        let out = safd_decompose(
            &tape,
            &cfg,
            &ssa_cfg(d),
            &w,
            &mut bn,
            &x1,
            true,
            AttentionMode::Spiking,
        )
        .unwrap();
        for j in 0..d {
            assert!(out.f_k.values()[j].abs() < 1e-9, "gated part should vanish");
            assert!((out.f_b.values()[j] - x1.values()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn gate_outputs_stay_in_the_open_unit_interval() {
        let d = 7;
        let tape = Tape::inference();
        let w = SafdWeights::init(d, 9, &mut ChaCha8Rng::seed_from_u64(31));
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..50 {
            let p = Tensor::from_fn(&[d], |_| rng.gen_range(-5.0..5.0));
            let gate = weight_module(&tape, &w, &p).unwrap();
            assert!(gate.values().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn zero_input_with_zero_bias_gates_at_one_half() {
        let d = 4;
        let tape = Tape::inference();
        let mut w = SafdWeights::init(d, 3, &mut ChaCha8Rng::seed_from_u64(41));
        w.gate_b1 = Tensor::zeros(&[3]);
        w.gate_b2 = Tensor::zeros(&[d]);
        let gate = weight_module(&tape, &w, &Tensor::zeros(&[d])).unwrap();
        assert!(gate.values().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn gate_gradient_matches_finite_differences() {
        let d = 5;
        let w = SafdWeights::init(d, 4, &mut ChaCha8Rng::seed_from_u64(43));
        let p0 = Tensor::from_fn(&[d], |i| 0.3 * (i as f64 + 1.0));
        let err = crate::diffcore::grad_check(
            move |tape, p| {
                Ok(crate::diffcore::ops::sum_all(
                    tape,
                    &weight_module(tape, &w, p)?,
                ))
            },
            &p0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "gate gradient error {err}");
    }

    #[test]
    fn batched_cascade_matches_per_sample_runs() {
        let (b, d) = (4, 6);
        let tape = Tape::inference();
        let cfg = SAFDConfig {
            iterations: 2,
            weight_hidden: 5,
        };
        let w = SafdWeights::init(d, 5, &mut ChaCha8Rng::seed_from_u64(47));
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let x = Tensor::from_fn(&[b, d], |_| rng.gen_range(-1.0..1.0));
        // Populate stats once, then compare in eval mode.
        let mut stats = RunningStats::new(d);
        safd_decompose(
            &tape,
            &cfg,
            &ssa_cfg(d),
            &w,
            &mut stats,
            &x,
            true,
            AttentionMode::Spiking,
        )
        .unwrap();
        let full = safd_decompose(
            &tape,
            &cfg,
            &ssa_cfg(d),
            &w,
            &mut stats.clone(),
            &x,
            false,
            AttentionMode::Spiking,
        )
        .unwrap();
        for bi in 0..b {
            let xs = Tensor::new(x.values()[bi * d..(bi + 1) * d].to_vec(), &[d]).unwrap();
            let one = safd_decompose(
                &tape,
                &cfg,
                &ssa_cfg(d),
                &w,
                &mut stats.clone(),
                &xs,
                false,
                AttentionMode::Spiking,
            )
            .unwrap();
            for j in 0..d {
                assert!(
                    (one.f_k.values()[j] - full.f_k.values()[bi * d + j]).abs() < 1e-12
                );
                assert!(
                    (one.f_b.values()[j] - full.f_b.values()[bi * d + j]).abs() < 1e-12
                );
            }
        }
    }
}
