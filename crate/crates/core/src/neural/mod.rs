//! Dense NCHW tensor kernels with hand-written backward passes.
//!
//! Every kernel is generic over [`Scalar`], so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod adam;
mod batchnorm;
mod conv;
mod gemm;
mod loss;
mod ops;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batchnorm::{BatchNorm, BnCache, Mode};
pub use conv::{Conv2d, ConvGrads};
pub use loss::{softmax, softmax_ce, CrossEntropy};
pub use ops::{
    concat, concat_backward, dropout, dropout_backward, maxpool2, maxpool2_backward, relu, relu_backward, UpConv2,
    UpConvGrads,
};
pub use tensor::{Param, Tensor4};

/// Floating-point element type of tensors.
pub trait Scalar:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}
