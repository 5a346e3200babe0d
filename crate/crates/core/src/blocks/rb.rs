use crate::error::{Error, Result};
use crate::model_io::WeightStore;
use crate::ops::{add, batchnorm, relu, BnParams, ConvSpec};
use crate::params::{export_bn, ParamSource};
use crate::reparam::{reparameterize_rb, FusedConv};
use crate::tensor::{Element, Tensor4};

use super::{export_fused, fused_cost, load_fused, ConvBn, Cost, Structure};

/// Residual path of a reparameterizable block.
#[derive(Debug, Clone, PartialEq)]
pub enum Residual<T> {
    None,
    Identity,
    /// Experimental variant with a BN on the identity path.
    IdentityBn(BnParams<T>),
}

/// Training-structure parameters: a 3x3 path, a chain of 1x1 convs (the
/// first carries the stride), and an optional residual.
#[derive(Debug, Clone, PartialEq)]
pub struct RbParams<T> {
    pub conv3: ConvBn<T>,
    pub pointwise: Vec<ConvBn<T>>,
    pub residual: Residual<T>,
}

impl<T: Element> RbParams<T> {
    pub fn validate(&self) -> Result<()> {
        let s3 = self.conv3.spec;
        if s3.kernel != 3 || s3.padding != 1 || s3.groups != 1 || !(1..=2).contains(&s3.stride) {
            return Err(Error::Contract(format!("3x3 path must be ungrouped k3 p1 s1|s2, got {s3:?}")));
        }
        let mut width = s3.in_channels;
        for (i, c) in self.pointwise.iter().enumerate() {
            let s = c.spec;
            let stride = if i == 0 { s3.stride } else { 1 };
            if s.kernel != 1 || s.padding != 0 || s.groups != 1 || s.stride != stride || s.in_channels != width {
                return Err(Error::Contract(format!("1x1 path conv {i} is malformed: {s:?}")));
            }
            width = s.out_channels;
        }
        if !self.pointwise.is_empty() && width != s3.out_channels {
            return Err(Error::Contract(format!(
                "1x1 path ends at {width} channels, 3x3 path at {}",
                s3.out_channels
            )));
        }
        if !matches!(self.residual, Residual::None) && (s3.stride != 1 || s3.in_channels != s3.out_channels) {
            return Err(Error::Contract("residual path requires stride 1 and in == out".into()));
        }
        if let Residual::IdentityBn(bn) = &self.residual {
            bn.validate()?;
            if bn.channels() != s3.out_channels {
                return Err(Error::Contract("residual BN width differs from block width".into()));
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let residual = match &self.residual {
            Residual::IdentityBn(bn) => 2 * bn.channels(),
            _ => 0,
        };
        self.conv3.param_count() + self.pointwise.iter().map(ConvBn::param_count).sum::<usize>() + residual
    }

    pub fn bn_count(&self) -> usize {
        1 + self.pointwise.len() + matches!(self.residual, Residual::IdentityBn(_)) as usize
    }
}

/// Shape and path selection of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RbConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Length of the 1x1 path; 0 removes the path.
    pub num_1x1: usize,
    pub residual: bool,
    pub residual_bn: bool,
}

impl RbConfig {
    pub fn has_residual(&self) -> bool {
        self.residual && self.stride == 1 && self.in_channels == self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RbForm<T> {
    Train(RbParams<T>),
    Deploy(FusedConv<T>),
}

/// A reparameterizable block. `relu` is false for blocks whose output feeds
/// a bilateral fusion, which applies the activation after its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Rb<T> {
    pub form: RbForm<T>,
    pub relu: bool,
}

/// `ReLU(conv3(x) + path1x1(x) + x)`, with the ReLU optional.
pub fn rb_forward_train<T: Element>(x: &Tensor4<T>, p: &RbParams<T>, apply_relu: bool) -> Result<Tensor4<T>> {
    let mut sum = p.conv3.forward(x)?;
    if let Some((head, tail)) = p.pointwise.split_first() {
        let mut y = head.forward(x)?;
        for c in tail {
            y = c.forward(&y)?;
        }
        sum = add(&sum, &y)?;
    }
    match &p.residual {
        Residual::None => {}
        Residual::Identity => sum = add(&sum, x)?,
        Residual::IdentityBn(bn) => sum = add(&sum, &batchnorm(x, bn)?)?,
    }
    Ok(if apply_relu { relu(&sum) } else { sum })
}

pub fn rb_forward_deploy<T: Element>(x: &Tensor4<T>, fused: &FusedConv<T>, apply_relu: bool) -> Result<Tensor4<T>> {
    let y = fused.forward(x)?;
    Ok(if apply_relu { relu(&y) } else { y })
}

impl<T: Element> Rb<T> {
    /// Train names: `{prefix}.conv3.*`, `{prefix}.conv1x1.{i}.*`,
    /// `{prefix}.residual.bn.*`. Deploy names: `{prefix}.fused.*`.
    pub fn load(
        src: &mut dyn ParamSource<T>,
        structure: Structure,
        prefix: &str,
        cfg: RbConfig,
        relu: bool,
    ) -> Result<Self> {
        let s3 = ConvSpec::new(cfg.in_channels, cfg.out_channels, 3, cfg.stride);
        let form = match structure {
            Structure::Deploy => RbForm::Deploy(load_fused(src, &format!("{prefix}.fused"), s3)?),
            Structure::Train => {
                let conv3 = ConvBn::load(src, &format!("{prefix}.conv3"), s3)?;
                let pointwise = (0..cfg.num_1x1)
                    .map(|i| {
                        let (cin, stride) = if i == 0 { (cfg.in_channels, cfg.stride) } else { (cfg.out_channels, 1) };
                        let spec = ConvSpec::new(cin, cfg.out_channels, 1, stride);
                        ConvBn::load(src, &format!("{prefix}.conv1x1.{i}"), spec)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let residual = match (cfg.has_residual(), cfg.residual_bn) {
                    (false, _) => Residual::None,
                    (true, false) => Residual::Identity,
                    (true, true) => Residual::IdentityBn(src.bn(&format!("{prefix}.residual.bn"), cfg.out_channels)?),
                };
                let p = RbParams { conv3, pointwise, residual };
                p.validate()?;
                RbForm::Train(p)
            }
        };
        Ok(Rb { form, relu })
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        match &self.form {
            RbForm::Deploy(f) => export_fused(f, &format!("{prefix}.fused"), store),
            RbForm::Train(p) => {
                p.conv3.export(&format!("{prefix}.conv3"), store)?;
                for (i, c) in p.pointwise.iter().enumerate() {
                    c.export(&format!("{prefix}.conv1x1.{i}"), store)?;
                }
                if let Residual::IdentityBn(bn) = &p.residual {
                    export_bn(store, &format!("{prefix}.residual.bn"), bn)?;
                }
                Ok(())
            }
        }
    }

    pub fn spec(&self) -> ConvSpec {
        match &self.form {
            RbForm::Train(p) => p.conv3.spec,
            RbForm::Deploy(f) => *f.spec(),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match &self.form {
            RbForm::Train(p) => rb_forward_train(x, p, self.relu),
            RbForm::Deploy(f) => rb_forward_deploy(x, f, self.relu),
        }
    }

    pub fn reparameterize(&self) -> Result<Self> {
        let form = match &self.form {
            RbForm::Train(p) => RbForm::Deploy(reparameterize_rb(p)?),
            RbForm::Deploy(f) => RbForm::Deploy(f.clone()),
        };
        Ok(Rb { form, relu: self.relu })
    }

    pub fn param_count(&self) -> usize {
        match &self.form {
            RbForm::Train(p) => p.param_count(),
            RbForm::Deploy(f) => f.param_count(),
        }
    }

    pub fn bn_count(&self) -> usize {
        match &self.form {
            RbForm::Train(p) => p.bn_count(),
            RbForm::Deploy(_) => 0,
        }
    }

    /// Cost for an input of `h x w`; returns the output size too.
    pub fn cost(&self, h: usize, w: usize) -> Result<(Cost, (usize, usize))> {
        let spec = self.spec();
        let (oh, ow) = spec.output_hw(h, w)?;
        let out = oh * ow;
        let elems = out * spec.out_channels;
        let mut cost = match &self.form {
            RbForm::Deploy(f) => fused_cost(f, out),
            RbForm::Train(p) => {
                let mut c = p.conv3.cost(out);
                c += p.pointwise.iter().map(|u| u.cost(out)).sum();
                let branches = 1 + !p.pointwise.is_empty() as usize + !matches!(p.residual, Residual::None) as usize;
                c += Cost::elementwise((branches - 1) * elems);
                if let Residual::IdentityBn(_) = p.residual {
                    c += Cost::elementwise(2 * elems);
                }
                c
            }
        };
        if self.relu {
            cost += Cost::elementwise(elems);
        }
        Ok((cost, (oh, ow)))
    }

    /// Copy with `delta` added to one fused bias entry.
    pub fn with_bias_offset(&self, channel: usize, delta: T) -> Result<Self> {
        match &self.form {
            RbForm::Deploy(f) => Ok(Rb { form: RbForm::Deploy(f.with_bias_offset(channel, delta)), relu: self.relu }),
            RbForm::Train(_) => Err(Error::Contract("bias offsets apply to deployment blocks only".into())),
        }
    }
}
