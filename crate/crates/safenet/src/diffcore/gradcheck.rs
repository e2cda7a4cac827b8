//! Finite-difference verification of autodiff gradients.

use crate::diffcore::tape::Tape;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares the tape gradient of the scalar-valued function `f` at `x`
/// against central finite differences and returns the maximum relative
/// error over all coordinates:
/// `max_i |autodiff_i − central_i| / (|central_i| + 1e-12)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tape, &Tensor) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "grad_check step must be positive, got {eps}"
        )));
    }
    let xp = Tensor::param(x.values().to_vec(), x.shape())?;
    let tape = Tape::new();
    let loss = f(&tape, &xp)?;
    if loss.numel() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check requires a scalar-valued function, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = tape.backward(&loss)?;
    let autodiff = grads.wrt_or_zeros(&xp);

    let mut max_rel = 0.0_f64;
    let base = x.values();
    for i in 0..x.numel() {
        let eval = |v: f64| -> Result<f64> {
            let mut probe = base.to_vec();
            probe[i] = v;
            let t = Tensor::new(probe, x.shape())?;
            f(&Tape::inference(), &t)?.item()
        };
        let central = (eval(base[i] + eps)? - eval(base[i] - eps)?) / (2.0 * eps);
        let rel = (autodiff[i] - central).abs() / (central.abs() + 1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ops;

    #[test]
    fn quadratic_is_near_exact() {
        let x = Tensor::new(vec![1.0, -2.0, 0.5, 3.0], &[4]).unwrap();
        let err = grad_check(
            |tape, x| {
                let sq = ops::mul(tape, x, x)?;
                Ok(ops::sum_all(tape, &sq))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let x = Tensor::new(vec![1.0], &[1]).unwrap();
        let res = grad_check(|tape, x| Ok(ops::sum_all(tape, x)), &x, 0.0);
        assert!(res.is_err());
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let res = grad_check(|tape, x| ops::add(tape, x, x), &x, 1e-5);
        assert!(res.is_err());
    }
}
