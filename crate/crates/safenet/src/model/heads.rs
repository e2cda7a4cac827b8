//! Output heads and training objectives: a linear regression head maps
//! the kinematic feature to joint angles, a linear classification head
//! maps the biological feature to subject logits, and the combined loss
//! adds a squared-error term, a cross-entropy term, and a penalty on the
//! overlap between the two feature streams.

use rand::Rng;

use crate::diffcore::ops::{
    add, cross_entropy_mean, linear, mean_all, mul, reshape, row_dot, scale, sub,
};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};

/// Learnable parameters of the two output heads.
#[derive(Clone, Debug)]
pub struct HeadWeights {
    /// Regression head: kinematic feature [d] → joint angles [n].
    pub w_r: Tensor,
    pub b_r: Tensor,
    /// Classification head: biological feature [d] → subject logits [C].
    pub w_c: Tensor,
    pub b_c: Tensor,
}

impl HeadWeights {
    pub fn init(d: usize, n_joints: usize, n_subjects: usize, rng: &mut impl Rng) -> Self {
        let bound = (3.0 / d as f64).sqrt();
        let mat = |cols: usize, rng: &mut dyn rand::RngCore| {
            Tensor::param(
                (0..d * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
                &[d, cols],
            )
            .expect("head matrix")
        };
        Self {
            w_r: mat(n_joints, rng),
            b_r: Tensor::param(vec![0.0; n_joints], &[n_joints]).expect("bias"),
            w_c: mat(n_subjects, rng),
            b_c: Tensor::param(vec![0.0; n_subjects], &[n_subjects]).expect("bias"),
        }
    }
}

/// Applies both heads: angles from the kinematic feature, subject
/// logits from the biological feature. Accepts [d] or [B×d].
pub fn heads(
    tape: &Tape,
    w: &HeadWeights,
    f_k: &Tensor,
    f_b: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let angles = linear(tape, f_k, &w.w_r, Some(&w.b_r))?;
    let logits = linear(tape, f_b, &w.w_c, Some(&w.b_c))?;
    Ok((angles, logits))
}

/// Mean squared error over every element of the prediction.
pub fn loss_mse(tape: &Tape, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.check_same_shape(target, "squared-error loss")?;
    if pred.numel() == 0 {
        return Err(Error::EmptyInput("squared-error loss".into()));
    }
    let diff = sub(tape, pred, target)?;
    Ok(mean_all(tape, &mul(tape, &diff, &diff)?))
}

/// Mean cross-entropy of subject logits against integer identities.
pub fn loss_ce(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    cross_entropy_mean(tape, logits, labels)
}

/// Mean squared inner product between paired kinematic and biological
/// features: zero exactly when every pair is orthogonal.
pub fn loss_orth(tape: &Tape, f_k: &Tensor, f_b: &Tensor) -> Result<Tensor> {
    f_k.check_same_shape(f_b, "orthogonality loss")?;
    let (a, b) = match f_k.rank() {
        1 => {
            let d = f_k.dim(0);
            (reshape(tape, f_k, &[1, d])?, reshape(tape, f_b, &[1, d])?)
        }
        2 => (f_k.clone(), f_b.clone()),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "orthogonality loss expects [d] or [B×d], got {:?}",
                f_k.shape()
            )))
        }
    };
    if a.dim(0) == 0 {
        return Err(Error::EmptyInput("orthogonality loss".into()));
    }
    let dots = row_dot(tape, &a, &b)?;
    Ok(mean_all(tape, &mul(tape, &dots, &dots)?))
}

/// Weighted sum of the three objectives:
/// α·regression + β·classification + γ·orthogonality.
pub fn loss_total(
    tape: &Tape,
    l_re: &Tensor,
    l_cls: &Tensor,
    l_orth: &Tensor,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<Tensor> {
    let weighted = add(
        tape,
        &scale(tape, l_re, alpha),
        &scale(tape, l_cls, beta),
    )?;
    add(tape, &weighted, &scale(tape, l_orth, gamma))
}
