use crate::error::Result;
use crate::model_io::WeightStore;
use crate::ops::{batchnorm, conv2d, BnParams, ConvSpec, ConvWeights};
use crate::params::{export_bn, export_tensor, ParamSource};
use crate::reparam::{fuse_conv_bn, FusedConv};
use crate::tensor::{Element, Tensor4};

use super::{Cost, Structure};

/// Bias-free convolution followed by frozen batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBn<T> {
    pub spec: ConvSpec,
    pub weights: ConvWeights<T>,
    pub bn: BnParams<T>,
}

impl<T: Element> ConvBn<T> {
    pub fn new(spec: ConvSpec, weight: Tensor4<T>, bn: BnParams<T>) -> Result<Self> {
        let weights = ConvWeights::new(weight, None);
        weights.check(&spec)?;
        Ok(ConvBn { spec, weights, bn })
    }

    pub fn load(src: &mut dyn ParamSource<T>, prefix: &str, spec: ConvSpec) -> Result<Self> {
        let weight = src.conv_weight(&format!("{prefix}.weight"), spec.weight_dims())?;
        let bn = src.bn(&format!("{prefix}.bn"), spec.out_channels)?;
        Self::new(spec, weight, bn)
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        export_tensor(store, format!("{prefix}.weight"), &self.weights.weight)?;
        export_bn(store, &format!("{prefix}.bn"), &self.bn)
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        batchnorm(&conv2d(x, &self.spec, &self.weights)?, &self.bn)
    }

    pub fn fuse(&self) -> Result<FusedConv<T>> {
        fuse_conv_bn(&self.spec, &self.weights, &self.bn)
    }

    /// Conv weights plus the learnable BN affine (running stats are buffers).
    pub fn param_count(&self) -> usize {
        self.spec.weight_len() + 2 * self.spec.out_channels
    }

    pub fn cost(&self, pixels: usize) -> Cost {
        Cost {
            macs: (self.spec.macs_per_pixel() * pixels) as u64,
            elementwise: (2 * pixels * self.spec.out_channels) as u64,
        }
    }
}

pub(crate) fn load_fused<T: Element>(
    src: &mut dyn ParamSource<T>,
    prefix: &str,
    spec: ConvSpec,
) -> Result<FusedConv<T>> {
    let weight = src.conv_weight(&format!("{prefix}.weight"), spec.weight_dims())?;
    let bias = src.bias(&format!("{prefix}.bias"), spec.out_channels)?;
    FusedConv::new(spec, weight, bias)
}

pub(crate) fn export_fused<T: Element>(c: &FusedConv<T>, prefix: &str, store: &mut WeightStore) -> Result<()> {
    export_tensor(store, format!("{prefix}.weight"), c.weight())?;
    let n = c.bias().len();
    store.insert_values(format!("{prefix}.bias"), &[n], c.bias())
}

pub(crate) fn fused_cost<T: Element>(c: &FusedConv<T>, pixels: usize) -> Cost {
    let s = c.spec();
    Cost {
        macs: (s.macs_per_pixel() * pixels) as u64,
        elementwise: (pixels * s.out_channels) as u64,
    }
}

/// A conv+BN pair in either structure.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvUnit<T> {
    Train(ConvBn<T>),
    Deploy(FusedConv<T>),
}

impl<T: Element> ConvUnit<T> {
    /// Train names: `{prefix}.weight`, `{prefix}.bn.*`.
    /// Deploy names: `{prefix}.fused.weight`, `{prefix}.fused.bias`.
    pub fn load(src: &mut dyn ParamSource<T>, structure: Structure, prefix: &str, spec: ConvSpec) -> Result<Self> {
        Ok(match structure {
            Structure::Train => ConvUnit::Train(ConvBn::load(src, prefix, spec)?),
            Structure::Deploy => ConvUnit::Deploy(load_fused(src, &format!("{prefix}.fused"), spec)?),
        })
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        match self {
            ConvUnit::Train(c) => c.export(prefix, store),
            ConvUnit::Deploy(f) => export_fused(f, &format!("{prefix}.fused"), store),
        }
    }

    pub fn spec(&self) -> &ConvSpec {
        match self {
            ConvUnit::Train(c) => &c.spec,
            ConvUnit::Deploy(f) => f.spec(),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            ConvUnit::Train(c) => c.forward(x),
            ConvUnit::Deploy(f) => f.forward(x),
        }
    }

    pub fn fold(&self) -> Result<Self> {
        Ok(match self {
            ConvUnit::Train(c) => ConvUnit::Deploy(c.fuse()?),
            ConvUnit::Deploy(f) => ConvUnit::Deploy(f.clone()),
        })
    }

    pub fn param_count(&self) -> usize {
        match self {
            ConvUnit::Train(c) => c.param_count(),
            ConvUnit::Deploy(f) => f.param_count(),
        }
    }

    pub fn bn_count(&self) -> usize {
        matches!(self, ConvUnit::Train(_)) as usize
    }

    pub fn cost(&self, pixels: usize) -> Cost {
        match self {
            ConvUnit::Train(c) => c.cost(pixels),
            ConvUnit::Deploy(f) => fused_cost(f, pixels),
        }
    }
}
