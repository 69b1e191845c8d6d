//! Minimal dense-tensor engine with reverse-mode differentiation: exactly
//! the operator set the residual architectures need, nothing more.
//!
//! Ops are free functions over `Tensor`; layers that carry state (batch
//! norm) are structs. Reductions accumulate in f64 and store f32, and
//! parallel loops split over disjoint output slices, so results are
//! bit-identical regardless of thread count.

mod conv;
pub mod gradcheck;
mod head;
mod init;
mod norm;
mod ops;
mod sgd;

pub use conv::{conv2d, conv2d_backward};
pub use head::{linear_softmax, linear_softmax_xent, linear_softmax_xent_backward};
pub use init::kaiming_normal;
pub use norm::{BatchNorm2d, Mode};
pub use ops::{
    add, avg_pool, avg_pool_backward, global_avg_pool, global_avg_pool_backward, pool_out_dim,
    relu, relu_backward,
};
pub use sgd::SgdMomentum;

use crate::error::{Error, Result};

/// Dense row-major tensor. `grad`, when present, matches `data` in length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch"
        );
        Self {
            shape,
            data,
            grad: None,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Dimension i, or 1 past the rank (broadcast-style convenience).
    pub fn dim(&self, i: usize) -> usize {
        self.shape.get(i).copied().unwrap_or(1)
    }

    /// Add `g` into the grad buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f32]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(grad) => {
                for (a, &b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape.len() != rank {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("expected rank {rank}, got shape {:?}", t.shape),
        });
    }
    Ok(())
}
