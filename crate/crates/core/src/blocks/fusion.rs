use crate::error::{Axis, Error, Result};
use crate::model_io::WeightStore;
use crate::ops::{add, bilinear_upsample, relu, ConvSpec};
use crate::params::ParamSource;
use crate::tensor::{Element, Tensor4};

use super::{ConvUnit, Cost, Structure, RESIZE_OPS};

/// Cross-branch exchange between the semantic (low resolution) and detail
/// (1/8) branches.
///
/// `s2d` compresses semantic channels with a 1x1 conv and upsamples by
/// `factor`; `d2s` is a chain of stride-2 3x3 convs, with a ReLU between
/// consecutive convs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub s2d: ConvUnit<T>,
    pub factor: usize,
    pub d2s: Vec<ConvUnit<T>>,
}

/// `xs' = ReLU(xs + d2s(xd))`, `xd' = ReLU(xd + up(s2d(xs)))`.
pub fn bilateral_fuse<T: Element>(
    xs: &Tensor4<T>,
    xd: &Tensor4<T>,
    p: &FusionParams<T>,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let (ds, dd) = (xs.dims(), xd.dims());
    if ds.h * p.factor != dd.h {
        return Err(Error::dim("bilateral_fuse", Axis::Height, ds.h * p.factor, dd.h));
    }
    if ds.w * p.factor != dd.w {
        return Err(Error::dim("bilateral_fuse", Axis::Width, ds.w * p.factor, dd.w));
    }
    let mut down = xd.clone();
    for (i, c) in p.d2s.iter().enumerate() {
        down = c.forward(&down)?;
        if i + 1 < p.d2s.len() {
            down = relu(&down);
        }
    }
    let up = bilinear_upsample(&p.s2d.forward(xs)?, p.factor)?;
    Ok((relu(&add(xs, &down)?), relu(&add(xd, &up)?)))
}

impl<T: Element> FusionParams<T> {
    /// Names: `{prefix}.s2d.*`, `{prefix}.d2s.{i}.*`. Channel widths of the
    /// stride-2 chain double at each intermediate step.
    pub fn load(
        src: &mut dyn ParamSource<T>,
        structure: Structure,
        prefix: &str,
        semantic: usize,
        detail: usize,
        factor: usize,
    ) -> Result<Self> {
        let steps = factor.trailing_zeros() as usize;
        if !factor.is_power_of_two() || steps == 0 {
            return Err(Error::InvalidDef(format!("fusion factor must be a power of two >= 2, got {factor}")));
        }
        let s2d = ConvUnit::load(src, structure, &format!("{prefix}.s2d"), ConvSpec::new(semantic, detail, 1, 1))?;
        let mut width = detail;
        let d2s = (0..steps)
            .map(|i| {
                let out = if i + 1 == steps { semantic } else { width * 2 };
                let spec = ConvSpec::new(width, out, 3, 2);
                width = out;
                ConvUnit::load(src, structure, &format!("{prefix}.d2s.{i}"), spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FusionParams { s2d, factor, d2s })
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        self.s2d.export(&format!("{prefix}.s2d"), store)?;
        for (i, c) in self.d2s.iter().enumerate() {
            c.export(&format!("{prefix}.d2s.{i}"), store)?;
        }
        Ok(())
    }

    pub fn fold(&self) -> Result<Self> {
        Ok(FusionParams {
            s2d: self.s2d.fold()?,
            factor: self.factor,
            d2s: self.d2s.iter().map(ConvUnit::fold).collect::<Result<_>>()?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.s2d.param_count() + self.d2s.iter().map(ConvUnit::param_count).sum::<usize>()
    }

    pub fn bn_count(&self) -> usize {
        self.s2d.bn_count() + self.d2s.iter().map(ConvUnit::bn_count).sum::<usize>()
    }

    /// Cost given the semantic input size `(h, w)`.
    pub fn cost(&self, h: usize, w: usize) -> Cost {
        let (sem, det) = (self.s2d.spec().in_channels, self.s2d.spec().out_channels);
        let (dh, dw) = (h * self.factor, w * self.factor);
        let mut c = self.s2d.cost(h * w);
        c += Cost::elementwise(RESIZE_OPS * det * dh * dw);
        let (mut ch, mut cw) = (dh, dw);
        for (i, u) in self.d2s.iter().enumerate() {
            ch /= 2;
            cw /= 2;
            c += u.cost(ch * cw);
            if i + 1 < self.d2s.len() {
                c += Cost::elementwise(u.spec().out_channels * ch * cw);
            }
        }
        // Two adds and two ReLUs.
        c + Cost::elementwise(2 * (sem * h * w + det * dh * dw))
    }
}
