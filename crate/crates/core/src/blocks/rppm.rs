use crate::error::{Error, Result};
use crate::model_io::WeightStore;
use crate::ops::{add, avg_pool, concat_channels, global_avg_pool, relu, resize_bilinear, ConvSpec, PoolWindow};
use crate::params::ParamSource;
use crate::reparam::{reparameterize_rppm_pair, FusedConv};
use crate::tensor::{Element, Tensor4};

use super::{export_fused, fused_cost, load_fused, ConvBn, ConvUnit, Cost, Structure, RESIZE_OPS};

/// Pooled-branch windows: `(kernel, stride)`; a global branch follows.
pub const RPPM_POOLS: [(usize, usize); 3] = [(5, 2), (9, 4), (17, 8)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Window(PoolWindow),
    Global,
}

impl Pool {
    fn apply<T: Element>(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Pool::Window(w) => avg_pool(x, *w),
            Pool::Global => Ok(global_avg_pool(x)),
        }
    }

    fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self {
            Pool::Window(win) => win.output_hw(h, w),
            Pool::Global => Ok((1, 1)),
        }
    }
}

/// The grouped 3x3 stage: two parallel convs in training, one after merging.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupedStage<T> {
    Pair(ConvBn<T>, ConvBn<T>),
    Merged(FusedConv<T>),
}

impl<T: Element> GroupedStage<T> {
    fn spec(&self) -> ConvSpec {
        match self {
            GroupedStage::Pair(a, _) => a.spec,
            GroupedStage::Merged(f) => *f.spec(),
        }
    }

    fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            GroupedStage::Pair(a, b) => add(&a.forward(x)?, &b.forward(x)?),
            GroupedStage::Merged(f) => f.forward(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RppmParams<T> {
    pub scale0: ConvUnit<T>,
    pub branches: Vec<(Pool, ConvUnit<T>)>,
    pub grouped: GroupedStage<T>,
    pub compression: ConvUnit<T>,
    pub shortcut: ConvUnit<T>,
}

/// Pyramid pooling with a parallel grouped stage.
///
/// Each pooled branch is conv-BN-ReLU on the pooled map, resized to the
/// input size and added to `scale0`. The four results are concatenated and
/// processed group-wise (one group per branch), then compressed together
/// with `scale0` and added to a 1x1 shortcut of the input.
pub fn rppm_forward<T: Element>(x: &Tensor4<T>, p: &RppmParams<T>) -> Result<Tensor4<T>> {
    let d = x.dims();
    let s0 = relu(&p.scale0.forward(x)?);
    let ys = p
        .branches
        .iter()
        .map(|(pool, conv)| {
            let b = relu(&conv.forward(&pool.apply(x)?)?);
            add(&resize_bilinear(&b, d.h, d.w)?, &s0)
        })
        .collect::<Result<Vec<_>>>()?;
    let g = relu(&p.grouped.forward(&concat_channels(&ys.iter().collect::<Vec<_>>())?)?);
    let c = p.compression.forward(&concat_channels(&[&s0, &g])?)?;
    add(&c, &p.shortcut.forward(x)?)
}

impl<T: Element> RppmParams<T> {
    /// Names under `{prefix}`: `scale0`, `branch{i}`, `grouped.a`,
    /// `grouped.b` (train) or `grouped.fused` (deploy), `compression`,
    /// `shortcut`.
    pub fn load(
        src: &mut dyn ParamSource<T>,
        structure: Structure,
        prefix: &str,
        in_channels: usize,
        branch: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let n = RPPM_POOLS.len() + 1;
        let mut unit = |name: String, spec| ConvUnit::load(src, structure, &format!("{prefix}.{name}"), spec);
        let scale0 = unit("scale0".into(), ConvSpec::new(in_channels, branch, 1, 1))?;
        let pools = RPPM_POOLS
            .iter()
            .map(|&(k, s)| Pool::Window(PoolWindow { kernel: k, stride: s, padding: k / 2 }))
            .chain([Pool::Global]);
        let branches = pools
            .enumerate()
            .map(|(i, pool)| Ok((pool, unit(format!("branch{i}"), ConvSpec::new(in_channels, branch, 1, 1))?)))
            .collect::<Result<Vec<_>>>()?;
        let compression = unit("compression".into(), ConvSpec::new(branch * (n + 1), out_channels, 1, 1))?;
        let shortcut = unit("shortcut".into(), ConvSpec::new(in_channels, out_channels, 1, 1))?;
        let gspec = ConvSpec::new(branch * n, branch * n, 3, 1).with_groups(n);
        let grouped = match structure {
            Structure::Train => GroupedStage::Pair(
                ConvBn::load(src, &format!("{prefix}.grouped.a"), gspec)?,
                ConvBn::load(src, &format!("{prefix}.grouped.b"), gspec)?,
            ),
            Structure::Deploy => GroupedStage::Merged(load_fused(src, &format!("{prefix}.grouped.fused"), gspec)?),
        };
        Ok(RppmParams { scale0, branches, grouped, compression, shortcut })
    }

    fn units(&self) -> Vec<(String, &ConvUnit<T>)> {
        let mut v = vec![("scale0".to_string(), &self.scale0)];
        v.extend(self.branches.iter().enumerate().map(|(i, (_, u))| (format!("branch{i}"), u)));
        v.push(("compression".into(), &self.compression));
        v.push(("shortcut".into(), &self.shortcut));
        v
    }

    pub fn export(&self, prefix: &str, store: &mut WeightStore) -> Result<()> {
        for (name, u) in self.units() {
            u.export(&format!("{prefix}.{name}"), store)?;
        }
        match &self.grouped {
            GroupedStage::Pair(a, b) => {
                a.export(&format!("{prefix}.grouped.a"), store)?;
                b.export(&format!("{prefix}.grouped.b"), store)
            }
            GroupedStage::Merged(f) => export_fused(f, &format!("{prefix}.grouped.fused"), store),
        }
    }

    /// Folds every BN and merges the grouped pair.
    pub fn reparameterize(&self) -> Result<Self> {
        Ok(RppmParams {
            scale0: self.scale0.fold()?,
            branches: self
                .branches
                .iter()
                .map(|(p, u)| Ok((*p, u.fold()?)))
                .collect::<Result<_>>()?,
            grouped: match &self.grouped {
                GroupedStage::Pair(a, b) => GroupedStage::Merged(reparameterize_rppm_pair(a, b)?),
                GroupedStage::Merged(f) => GroupedStage::Merged(f.clone()),
            },
            compression: self.compression.fold()?,
            shortcut: self.shortcut.fold()?,
        })
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        rppm_forward(x, self)
    }

    pub fn param_count(&self) -> usize {
        let grouped = match &self.grouped {
            GroupedStage::Pair(a, b) => a.param_count() + b.param_count(),
            GroupedStage::Merged(f) => f.param_count(),
        };
        self.units().iter().map(|(_, u)| u.param_count()).sum::<usize>() + grouped
    }

    pub fn bn_count(&self) -> usize {
        let grouped = match &self.grouped {
            GroupedStage::Pair(..) => 2,
            GroupedStage::Merged(_) => 0,
        };
        self.units().iter().map(|(_, u)| u.bn_count()).sum::<usize>() + grouped
    }

    pub fn out_channels(&self) -> usize {
        self.compression.spec().out_channels
    }

    pub fn cost(&self, h: usize, w: usize) -> Result<Cost> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDef("empty RPPM input".into()));
        }
        let px = h * w;
        let cb = self.scale0.spec().out_channels;
        let mut c = self.scale0.cost(px) + Cost::elementwise(cb * px);
        for (pool, u) in &self.branches {
            let (ph, pw) = pool.output_hw(h, w)?;
            let cin = u.spec().in_channels;
            let pool_ops = match pool {
                Pool::Window(win) => win.kernel * win.kernel * ph * pw,
                Pool::Global => px,
            };
            c += Cost::elementwise(cin * pool_ops);
            c += u.cost(ph * pw) + Cost::elementwise(cb * ph * pw);
            c += Cost::elementwise((RESIZE_OPS + 1) * cb * px);
        }
        let gs = self.grouped.spec();
        c += match &self.grouped {
            GroupedStage::Pair(a, b) => a.cost(px) + b.cost(px) + Cost::elementwise(gs.out_channels * px),
            GroupedStage::Merged(f) => fused_cost(f, px),
        };
        c += Cost::elementwise(gs.out_channels * px);
        c += self.compression.cost(px) + self.shortcut.cost(px);
        Ok(c + Cost::elementwise(self.out_channels() * px))
    }
}
