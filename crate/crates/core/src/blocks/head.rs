use crate::error::Result;
use crate::model_io::WeightStore;
use crate::ops::{relu, resize_bilinear, ConvSpec};
use crate::params::ParamSource;
use crate::reparam::FusedConv;
use crate::tensor::{Element, Tensor4};

use super::{export_fused, fused_cost, load_fused, ConvUnit, Cost, Structure, RESIZE_OPS};

/// 3x3 conv-BN-ReLU to `O_c` channels, then a 1x1 classifier with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub conv3: ConvUnit<T>,
    pub classifier: FusedConv<T>,
}

/// Logits resized to `out_hw`.
pub fn head_forward<T: Element>(x: &Tensor4<T>, p: &HeadParams<T>, out_hw: (usize, usize)) -> Result<Tensor4<T>> {
    let y = relu(&p.conv3.forward(x)?);
    let logits = p.classifier.forward(&y)?;
    resize_bilinear(&logits, out_hw.0, out_hw.1)
}

impl<T: Element> HeadParams<T> {
    /// Names: `{prefix}.conv3.*` and `{prefix}.classifier.{weight,bias}`;
    /// the classifier has no BN and keeps its names in both structures.
    pub fn load(
        src: &mut dyn ParamSource<T>,
        structure: Structure,
        prefix: &str,
        in_channels: usize,
        mid: usize,
        classes: usize,
    ) -> Result<Self> {
        let conv3 = ConvUnit::load(src, structure, &format!("{prefix}.conv3"), ConvSpec::new(in_channels, mid, 3, 1))?;
        let classifier = load_fused(src, &format!("{prefix}.classifier"), ConvSpec::new(mid, classes, 1, 1))?;
        Ok(HeadParams { conv3, classifier })
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        self.conv3.export(&format!("{prefix}.conv3"), store)?;
        export_fused(&self.classifier, &format!("{prefix}.classifier"), store)
    }

    pub fn fold(&self) -> Result<Self> {
        Ok(HeadParams { conv3: self.conv3.fold()?, classifier: self.classifier.clone() })
    }

    pub fn forward(&self, x: &Tensor4<T>, out_hw: (usize, usize)) -> Result<Tensor4<T>> {
        head_forward(x, self, out_hw)
    }

    pub fn param_count(&self) -> usize {
        self.conv3.param_count() + self.classifier.param_count()
    }

    pub fn bn_count(&self) -> usize {
        self.conv3.bn_count()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.spec().out_channels
    }

    pub fn cost(&self, h: usize, w: usize, out_hw: (usize, usize)) -> Cost {
        let px = h * w;
        let mid = self.conv3.spec().out_channels;
        let mut c = self.conv3.cost(px) + Cost::elementwise(mid * px) + fused_cost(&self.classifier, px);
        if out_hw != (h, w) {
            c += Cost::elementwise(RESIZE_OPS * self.num_classes() * out_hw.0 * out_hw.1);
        }
        c
    }
}
