//! Runtime blocks in training and deployment structure.
//!
//! Every block loads its parameters from a [`ParamSource`](crate::params::ParamSource)
//! under a canonical dotted prefix and can export them back to a
//! [`WeightStore`](crate::model_io::WeightStore) under the same names.

mod bottleneck;
mod fusion;
mod head;
mod rb;
mod rppm;
mod unit;

use std::ops::{Add, AddAssign};

pub use bottleneck::{bb_forward, BbParams};
pub use fusion::{bilateral_fuse, FusionParams};
pub use head::{head_forward, HeadParams};
pub use rb::{rb_forward_deploy, rb_forward_train, Rb, RbConfig, RbForm, RbParams, Residual};
pub use rppm::{rppm_forward, GroupedStage, Pool, RppmParams, RPPM_POOLS};
pub use unit::{ConvBn, ConvUnit};

pub(crate) use unit::{export_fused, fused_cost, load_fused};

/// Which of the two equivalent graph forms a block holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Structure {
    Train,
    Deploy,
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Structure::Train => "train",
            Structure::Deploy => "deploy",
        })
    }
}

/// Arithmetic cost of a forward pass.
///
/// `macs` counts convolution multiply-accumulates; `elementwise` counts
/// every other scalar operation (BN affine, bias, ReLU, adds, pooling,
/// resampling).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cost {
    pub macs: u64,
    pub elementwise: u64,
}

impl Cost {
    pub fn elementwise(n: usize) -> Self {
        Cost { macs: 0, elementwise: n as u64 }
    }

    /// `2 * macs + elementwise`.
    pub fn flops(&self) -> u64 {
        2 * self.macs + self.elementwise
    }
}

impl Add for Cost {
    type Output = Cost;

    fn add(self, rhs: Cost) -> Cost {
        Cost { macs: self.macs + rhs.macs, elementwise: self.elementwise + rhs.elementwise }
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::default(), Add::add)
    }
}

/// Scalar ops per output element of a bilinear resize (three lerps).
pub(crate) const RESIZE_OPS: usize = 6;
