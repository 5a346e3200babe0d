use crate::error::Result;
use crate::model_io::WeightStore;
use crate::ops::{add, relu, ConvSpec};
use crate::params::ParamSource;
use crate::tensor::{Element, Tensor4};

use super::{ConvUnit, Cost, Structure};

/// Bottleneck: 1x1 reduce to `out / 2`, 3x3 (strided), 1x1 expand, with a
/// projected shortcut when the shape changes. Not reparameterized beyond
/// BN folding.
#[derive(Debug, Clone, PartialEq)]
pub struct BbParams<T> {
    pub reduce: ConvUnit<T>,
    pub middle: ConvUnit<T>,
    pub expand: ConvUnit<T>,
    pub project: Option<ConvUnit<T>>,
}

pub fn bb_forward<T: Element>(x: &Tensor4<T>, p: &BbParams<T>) -> Result<Tensor4<T>> {
    let y = relu(&p.reduce.forward(x)?);
    let y = relu(&p.middle.forward(&y)?);
    let y = p.expand.forward(&y)?;
    let shortcut = match &p.project {
        Some(c) => add(&y, &c.forward(x)?)?,
        None => add(&y, x)?,
    };
    Ok(relu(&shortcut))
}

impl<T: Element> BbParams<T> {
    pub fn load(
        src: &mut dyn ParamSource<T>,
        structure: Structure,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let mid = out_channels / 2;
        let mut unit = |name: &str, spec| ConvUnit::load(src, structure, &format!("{prefix}.{name}"), spec);
        let reduce = unit("reduce", ConvSpec::new(in_channels, mid, 1, 1))?;
        let middle = unit("middle", ConvSpec::new(mid, mid, 3, stride))?;
        let expand = unit("expand", ConvSpec::new(mid, out_channels, 1, 1))?;
        let project = if stride != 1 || in_channels != out_channels {
            Some(unit("project", ConvSpec::new(in_channels, out_channels, 1, stride))?)
        } else {
            None
        };
        Ok(BbParams { reduce, middle, expand, project })
    }

    fn units(&self) -> impl Iterator<Item = (&'static str, &ConvUnit<T>)> {
        [("reduce", &self.reduce), ("middle", &self.middle), ("expand", &self.expand)]
            .into_iter()
            .chain(self.project.as_ref().map(|p| ("project", p)))
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        self.units().try_for_each(|(name, u)| u.export(&format!("{prefix}.{name}"), store))
    }

    pub fn fold(&self) -> Result<Self> {
        Ok(BbParams {
            reduce: self.reduce.fold()?,
            middle: self.middle.fold()?,
            expand: self.expand.fold()?,
            project: self.project.as_ref().map(ConvUnit::fold).transpose()?,
        })
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        bb_forward(x, self)
    }

    pub fn param_count(&self) -> usize {
        self.units().map(|(_, u)| u.param_count()).sum()
    }

    pub fn bn_count(&self) -> usize {
        self.units().map(|(_, u)| u.bn_count()).sum()
    }

    pub fn out_channels(&self) -> usize {
        self.expand.spec().out_channels
    }

    pub fn cost(&self, h: usize, w: usize) -> Result<(Cost, (usize, usize))> {
        let (oh, ow) = self.middle.spec().output_hw(h, w)?;
        let (inp, out) = (h * w, oh * ow);
        let mid = self.reduce.spec().out_channels;
        let mut c = self.reduce.cost(inp) + self.middle.cost(out) + self.expand.cost(out);
        if let Some(p) = &self.project {
            c += p.cost(out);
        }
        // ReLU after reduce and middle, shortcut add, output ReLU.
        c += Cost::elementwise(mid * inp + mid * out + 2 * self.out_channels() * out);
        Ok((c, (oh, ow)))
    }
}
