//! Dense 64-bit float arrays with shape metadata.
//!
//! Values are immutable once a tensor is built, so handles are cheap to
//! clone and safe to share across threads. Gradients are not stored on the
//! tensor itself; [`crate::diffcore::Tape::backward`] returns them in a
//! separate [`crate::diffcore::Gradients`] store keyed by tensor id.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{shape_mismatch, Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
struct Inner {
    id: u64,
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
}

/// Immutable dense array of f64 with a unique id.
#[derive(Clone, Debug)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {:?} implies {} values, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Self::build(values, shape, false))
    }

    /// Leaf tensor that participates in gradient computation.
    pub fn param(values: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(values, shape)?;
        Ok(Self {
            inner: Arc::new(Inner {
                id: t.inner.id,
                shape: t.inner.shape.clone(),
                values: t.inner.values.clone(),
                requires_grad: true,
            }),
        })
    }

    pub(crate) fn build(values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Self {
        Self {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: shape.to_vec(),
                values,
                requires_grad,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(vec![0.0; numel], shape, false)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::build(vec![1.0; numel], shape, false)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::build(vec![value; numel], shape, false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![value], &[], false)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        Self::build((0..numel).map(&mut f).collect(), shape, false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.inner.values
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.inner.values.len()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    /// Scalar value; errors on non-scalar tensors.
    pub fn item(&self) -> Result<f64> {
        if self.numel() == 1 {
            Ok(self.inner.values[0])
        } else {
            Err(Error::InvalidArgument(format!(
                "expected scalar, got shape {:?}",
                self.shape()
            )))
        }
    }

    /// Dimension size along `axis`.
    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn is_finite(&self) -> bool {
        self.inner.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, context: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(shape_mismatch(context, self.shape(), other.shape()))
        }
    }
}

/// Debug-mode guard: an operation on finite inputs must produce finite
/// output. Non-finite inputs propagate without tripping the check.
#[inline]
pub(crate) fn debug_check_finite(op: &str, out: &[f64], inputs: &[&Tensor]) {
    if cfg!(debug_assertions) && out.iter().any(|v| !v.is_finite()) {
        let inputs_finite = inputs.iter().all(|t| t.is_finite());
        if inputs_finite {
            panic!("{op}: non-finite output from finite inputs");
        }
    }
}
