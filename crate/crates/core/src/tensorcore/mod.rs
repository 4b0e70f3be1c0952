//! Dense tensors, a reverse-mode differentiation tape, the layer set used by
//! the networks, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{BatchNormStats, BnMode, CustomOp, Graph, Var};
pub use kernels::Activation;
pub use tensor::{DType, Scalar, Tensor};
pub(crate) use tensor::matmul;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Tensor with entries drawn from N(mean, std²).
pub fn normal_tensor<T: Scalar>(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("finite normal parameters");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// 2×2 mean pooling of an NCHW tensor with even spatial extents.
pub fn avg_pool2x<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("avg_pool2x")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(crate::Error::Shape(format!(
            "avg_pool2x: odd spatial extent {h}x{w}"
        )));
    }
    Tensor::new(
        vec![n, c, h / 2, w / 2],
        kernels::avg_pool2x(x.data(), n * c, h, w),
    )
}


pub(crate) fn checked_numel_pub(shape: &[usize]) -> Option<usize> {
    tensor::checked_numel(shape)
}
