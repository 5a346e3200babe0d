//! Forward-only neural operators over [`Tensor4`](crate::tensor::Tensor4).
//!
//! All operators are pure functions of their inputs.

mod conv;
mod elementwise;
mod norm;
mod resample;

pub use conv::{conv2d, conv2d_direct, ConvSpec, ConvWeights};
pub use elementwise::{add, concat_channels, relu};
pub use norm::{batchnorm, BnParams, BN_EPS};
pub use resample::{avg_pool, bilinear_upsample, global_avg_pool, resize_bilinear, PoolWindow};
