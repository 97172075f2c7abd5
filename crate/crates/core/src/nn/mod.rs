//! Differentiable layers: 3x3 convolution, batch normalization and ReLU,
//! each with an analytic backward pass, plus a finite-difference checker.

mod batchnorm;
mod conv;
pub mod gradcheck;

pub use batchnorm::{
    batchnorm2d, batchnorm2d_backward, batchnorm2d_infer_inplace, batchnorm2d_owned, BnCache,
    BnGrads, BnParams, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, conv2d_direct, ConvGrads, ConvParams};
pub use gradcheck::{grad_check, grad_check_scalar, GradCheckReport};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Batch-norm evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Stored running statistics; nothing is mutated.
    Infer,
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_inplace<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Backward through ReLU given its forward *output* (positive exactly where
/// the input was). The subgradient at 0 is 0.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = grad_out.clone();
    relu_backward_inplace(output, &mut g)?;
    Ok(g)
}

pub fn relu_backward_inplace<T: Real>(output: &Tensor<T>, grad: &mut Tensor<T>) -> Result<()> {
    if output.dims() != grad.dims() {
        return Err(Error::shape(
            &grad.dims().as_array(),
            &output.dims().as_array(),
            "relu upstream gradient vs output",
        ));
    }
    for (g, &o) in grad.data_mut().iter_mut().zip(output.data()) {
        if !(o > T::zero()) {
            *g = T::zero();
        }
    }
    Ok(())
}
