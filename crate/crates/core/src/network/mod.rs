//! The staged dual-branch network: construction, forward passes,
//! reparameterization, and parameter/cost accounting.

mod def;

use std::fmt::Write as _;

pub use def::{Ablation, NetworkDef, StageGroup, INPUT_MULTIPLE, PRESETS};

use crate::blocks::{
    BbParams, ConvUnit, Cost, FusionParams, GroupedStage, HeadParams, Rb, RbConfig, RbForm, RppmParams, Structure,
    RESIZE_OPS,
};
use crate::error::{Axis, Error, Result};
use crate::model_io::WeightStore;
use crate::ops::{add, bilinear_upsample, relu, ConvSpec};
use crate::params::{ParamSource, RandomParams, StoreParams, ZeroParams};
use crate::tensor::{Element, Tensor4};

/// Semantic-branch context module.
#[derive(Debug, Clone, PartialEq)]
pub enum Context<T> {
    Rppm(RppmParams<T>),
    /// 1x1 conv-BN used when the pyramid pooling module is ablated.
    Project(ConvUnit<T>),
}

impl<T: Element> Context<T> {
    fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            Context::Rppm(p) => p.forward(x),
            Context::Project(u) => u.forward(x),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            Context::Rppm(p) => p.param_count(),
            Context::Project(u) => u.param_count(),
        }
    }

    fn bn_count(&self) -> usize {
        match self {
            Context::Rppm(p) => p.bn_count(),
            Context::Project(u) => u.bn_count(),
        }
    }

    fn out_channels(&self) -> usize {
        match self {
            Context::Rppm(p) => p.out_channels(),
            Context::Project(u) => u.spec().out_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output<T> {
    pub logits: Tensor4<T>,
    /// Present only for training-structure networks with an aux head.
    pub aux: Option<Tensor4<T>>,
}

/// Parameters and cost of one section for a given input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub params: usize,
    pub cost: Cost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accounting {
    pub input_hw: (usize, usize),
    pub sections: Vec<Section>,
    /// `(name, [c, h, w])` of every stage output, in execution order.
    pub shapes: Vec<(String, [usize; 3])>,
}

impl Accounting {
    pub fn params(&self) -> usize {
        self.sections.iter().map(|s| s.params).sum()
    }

    pub fn cost(&self) -> Cost {
        self.sections.iter().map(|s| s.cost).sum()
    }

    pub fn shape(&self, name: &str) -> Option<[usize; 3]> {
        self.shapes.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    def: NetworkDef,
    structure: Structure,
    stem: Vec<Vec<Rb<T>>>,
    semantic: Vec<Vec<Rb<T>>>,
    detail: Vec<Vec<Rb<T>>>,
    fusion: Vec<Option<FusionParams<T>>>,
    stage6_semantic: Vec<BbParams<T>>,
    stage6_detail: Vec<BbParams<T>>,
    context: Context<T>,
    head: HeadParams<T>,
    aux_head: Option<HeadParams<T>>,
}

fn check_input(def: &NetworkDef, c: usize, h: usize, w: usize) -> Result<()> {
    if c != def.in_channels {
        return Err(Error::dim("forward", Axis::Channel, def.in_channels, c).in_stage("input"));
    }
    if h == 0 || w == 0 || !h.is_multiple_of(INPUT_MULTIPLE) || !w.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::Contract(format!(
            "input size {h}x{w} is not a positive multiple of {INPUT_MULTIPLE} in both dimensions"
        ))
        .in_stage("input"));
    }
    Ok(())
}

fn run_rbs<T: Element>(
    blocks: &[Rb<T>],
    prefix: &str,
    mut x: Tensor4<T>,
    trace: &mut dyn FnMut(&str, &Tensor4<T>),
) -> Result<Tensor4<T>> {
    for (i, b) in blocks.iter().enumerate() {
        let name = format!("{prefix}.block{i}");
        x = b.forward(&x).map_err(|e| e.in_stage(&name))?;
        trace(&name, &x);
    }
    Ok(x)
}

fn run_bbs<T: Element>(
    blocks: &[BbParams<T>],
    prefix: &str,
    mut x: Tensor4<T>,
    trace: &mut dyn FnMut(&str, &Tensor4<T>),
) -> Result<Tensor4<T>> {
    for (i, b) in blocks.iter().enumerate() {
        let name = format!("{prefix}.block{i}");
        x = b.forward(&x).map_err(|e| e.in_stage(&name))?;
        trace(&name, &x);
    }
    Ok(x)
}

fn rb_cost<T: Element>(blocks: &[Rb<T>], mut hw: (usize, usize)) -> Result<(usize, Cost, (usize, usize))> {
    let mut cost = Cost::default();
    for b in blocks {
        let (c, out) = b.cost(hw.0, hw.1)?;
        cost += c;
        hw = out;
    }
    Ok((blocks.iter().map(Rb::param_count).sum(), cost, hw))
}

fn bb_cost<T: Element>(blocks: &[BbParams<T>], mut hw: (usize, usize)) -> Result<(usize, Cost, (usize, usize))> {
    let mut cost = Cost::default();
    for b in blocks {
        let (c, out) = b.cost(hw.0, hw.1)?;
        cost += c;
        hw = out;
    }
    Ok((blocks.iter().map(BbParams::param_count).sum(), cost, hw))
}

impl<T: Element> Network<T> {
    /// Builds the graph, drawing parameters from `src` in a fixed order.
    pub fn build(def: &NetworkDef, structure: Structure, src: &mut dyn ParamSource<T>) -> Result<Self> {
        def.validate()?;
        let ab = def.ablation;
        let cfg = |in_channels, out_channels, stride| RbConfig {
            in_channels,
            out_channels,
            stride,
            num_1x1: ab.num_1x1,
            residual: ab.residual,
            residual_bn: ab.residual_bn,
        };
        let rbs = |src: &mut dyn ParamSource<T>, prefix: &str, cin: usize, cout: usize, n: usize, down: bool, last_relu: bool| {
            (0..n)
                .map(|i| {
                    let stride = if down && i == 0 { 2 } else { 1 };
                    let cin = if i == 0 { cin } else { cout };
                    let relu = last_relu || i + 1 < n;
                    Rb::load(src, structure, &format!("{prefix}.block{i}"), cfg(cin, cout, stride), relu)
                })
                .collect::<Result<Vec<_>>>()
        };

        let mut width = def.in_channels;
        let mut stem = Vec::new();
        for s in 0..3 {
            let out = def.stem.widths[s];
            stem.push(rbs(src, &format!("stage{}", s + 1), width, out, def.stem.blocks[s], true, true)?);
            width = out;
        }

        let (mut ws, mut wd) = (width, width);
        let (mut semantic, mut detail, mut fusion) = (Vec::new(), Vec::new(), Vec::new());
        let mut aux_head = None;
        for s in 0..2 {
            let stage = s + 4;
            let (os, od) = (def.semantic.widths[s], def.detail.widths[s]);
            semantic.push(rbs(src, &format!("stage{stage}.semantic"), ws, os, def.semantic.blocks[s], true, false)?);
            detail.push(rbs(src, &format!("stage{stage}.detail"), wd, od, def.detail.blocks[s], false, false)?);
            (ws, wd) = (os, od);
            let enabled = [ab.fusion1, ab.fusion2][s];
            fusion.push(if enabled {
                Some(FusionParams::load(src, structure, &format!("fusion{}", s + 1), ws, wd, 2 << s)?)
            } else {
                None
            });
            if s == 0 && def.aux_head && structure == Structure::Train {
                aux_head = Some(HeadParams::load(src, structure, "aux_head", wd, def.head_channels, def.num_classes)?);
            }
        }

        let bbs = |src: &mut dyn ParamSource<T>, prefix: &str, cin: usize, cout: usize, n: usize, stride: usize| {
            (0..n)
                .map(|i| {
                    let (cin, stride) = if i == 0 { (cin, stride) } else { (cout, 1) };
                    BbParams::load(src, structure, &format!("{prefix}.block{i}"), cin, cout, stride)
                })
                .collect::<Result<Vec<_>>>()
        };
        let stage6_semantic = bbs(src, "stage6.semantic", ws, def.semantic.widths[2], def.semantic.blocks[2], 2)?;
        let stage6_detail = bbs(src, "stage6.detail", wd, def.detail.widths[2], def.detail.blocks[2], 1)?;
        (ws, wd) = (def.semantic.widths[2], def.detail.widths[2]);

        let context = if ab.rppm {
            Context::Rppm(RppmParams::load(src, structure, "rppm", ws, def.ppm_channels, wd)?)
        } else {
            Context::Project(ConvUnit::load(src, structure, "context.project", ConvSpec::new(ws, wd, 1, 1))?)
        };
        let head = HeadParams::load(src, structure, "head", wd, def.head_channels, def.num_classes)?;

        Ok(Network {
            def: def.clone(),
            structure,
            stem,
            semantic,
            detail,
            fusion,
            stage6_semantic,
            stage6_detail,
            context,
            head,
            aux_head,
        })
    }

    /// Training-structure network with seeded random parameters.
    pub fn random(def: &NetworkDef, seed: u64) -> Result<Self> {
        Self::build(def, Structure::Train, &mut RandomParams::new(seed, def.bn_eps))
    }

    /// Structure-only network (zero weights, identity BN) for accounting.
    pub fn zeros(def: &NetworkDef, structure: Structure) -> Result<Self> {
        Self::build(def, structure, &mut ZeroParams { eps: def.bn_eps })
    }

    /// Loads a network whose structure is inferred from the store: any BN
    /// tensor means training structure. Every stored tensor must be used.
    pub fn from_store(def: &NetworkDef, store: &WeightStore) -> Result<Self> {
        let structure = if store.has_batchnorm() { Structure::Train } else { Structure::Deploy };
        let mut src = StoreParams::new(store);
        let net = Self::build(def, structure, &mut src)?;
        if let Some(name) = src.unused().next() {
            return Err(Error::BadTensor { name: name.to_string(), reason: "not part of the network definition".into() });
        }
        Ok(net)
    }

    pub fn def(&self) -> &NetworkDef {
        &self.def
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn forward(&self, x: &Tensor4<T>, want_aux: bool) -> Result<Output<T>> {
        self.forward_traced(x, want_aux, &mut |_, _| {})
    }

    /// Forward pass reporting every block output (`stage2.block3`,
    /// `fusion1.semantic`, ...) and stage output (`stage1`, `stage4.detail`,
    /// ...) to `trace`.
    pub fn forward_traced(
        &self,
        x: &Tensor4<T>,
        want_aux: bool,
        trace: &mut dyn FnMut(&str, &Tensor4<T>),
    ) -> Result<Output<T>> {
        let d = x.dims();
        check_input(&self.def, d.c, d.h, d.w)?;
        let mut y = x.clone();
        for (s, blocks) in self.stem.iter().enumerate() {
            let name = format!("stage{}", s + 1);
            y = run_rbs(blocks, &name, y, trace)?;
            trace(&name, &y);
        }

        let (mut xs, mut xd) = (y.clone(), y);
        let mut aux = None;
        for s in 0..2 {
            let stage = s + 4;
            let (ns, nd) = (format!("stage{stage}.semantic"), format!("stage{stage}.detail"));
            xs = run_rbs(&self.semantic[s], &ns, xs, trace)?;
            xd = run_rbs(&self.detail[s], &nd, xd, trace)?;
            trace(&ns, &xs);
            trace(&nd, &xd);
            let fname = format!("fusion{}", s + 1);
            (xs, xd) = match &self.fusion[s] {
                Some(f) => crate::blocks::bilateral_fuse(&xs, &xd, f).map_err(|e| e.in_stage(&fname))?,
                None => (relu(&xs), relu(&xd)),
            };
            trace(&format!("{fname}.semantic"), &xs);
            trace(&format!("{fname}.detail"), &xd);
            if s == 0 && want_aux {
                if let Some(h) = &self.aux_head {
                    let a = h.forward(&xd, (d.h, d.w)).map_err(|e| e.in_stage("aux_head"))?;
                    trace("aux_head", &a);
                    aux = Some(a);
                }
            }
        }

        xs = run_bbs(&self.stage6_semantic, "stage6.semantic", xs, trace)?;
        xd = run_bbs(&self.stage6_detail, "stage6.detail", xd, trace)?;
        trace("stage6.semantic", &xs);
        trace("stage6.detail", &xd);

        let ctx = self.context.forward(&xs).map_err(|e| e.in_stage("context"))?;
        trace("context", &ctx);
        let factor = xd.dims().h / ctx.dims().h.max(1);
        let merged = add(&xd, &bilinear_upsample(&ctx, factor)?).map_err(|e| e.in_stage("context"))?;
        let logits = self.head.forward(&merged, (d.h, d.w)).map_err(|e| e.in_stage("head"))?;
        trace("head", &logits);
        Ok(Output { logits, aux })
    }

    /// Deployment form: every reparameterizable block becomes one 3x3
    /// conv, the grouped pair is merged, all BNs are folded and the aux head
    /// is dropped.
    pub fn reparameterize(&self) -> Result<Self> {
        let rbs = |stages: &[Vec<Rb<T>>]| -> Result<Vec<Vec<Rb<T>>>> {
            stages.iter().map(|s| s.iter().map(Rb::reparameterize).collect()).collect()
        };
        let bbs = |s: &[BbParams<T>]| -> Result<Vec<BbParams<T>>> { s.iter().map(BbParams::fold).collect() };
        Ok(Network {
            def: self.def.clone(),
            structure: Structure::Deploy,
            stem: rbs(&self.stem)?,
            semantic: rbs(&self.semantic)?,
            detail: rbs(&self.detail)?,
            fusion: self.fusion.iter().map(|f| f.as_ref().map(FusionParams::fold).transpose()).collect::<Result<_>>()?,
            stage6_semantic: bbs(&self.stage6_semantic)?,
            stage6_detail: bbs(&self.stage6_detail)?,
            context: match &self.context {
                Context::Rppm(p) => Context::Rppm(p.reparameterize()?),
                Context::Project(u) => Context::Project(u.fold()?),
            },
            head: self.head.fold()?,
            aux_head: None,
        })
    }

    fn rb_slots(&self) -> Vec<(String, &Rb<T>)> {
        let mut v = Vec::new();
        for (s, blocks) in self.stem.iter().enumerate() {
            v.extend(blocks.iter().enumerate().map(|(i, b)| (format!("stage{}.block{i}", s + 1), b)));
        }
        for s in 0..2 {
            for (branch, stages) in [("semantic", &self.semantic), ("detail", &self.detail)] {
                v.extend(stages[s].iter().enumerate().map(|(i, b)| (format!("stage{}.{branch}.block{i}", s + 4), b)));
            }
        }
        v
    }

    /// Names of all reparameterizable blocks, in execution order.
    pub fn rb_names(&self) -> Vec<String> {
        self.rb_slots().into_iter().map(|(n, _)| n).collect()
    }

    pub fn rb(&self, name: &str) -> Option<&Rb<T>> {
        self.rb_slots().into_iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    /// Adds `delta` to one fused bias entry of a deployment block.
    pub fn perturb_bias(&mut self, block: &str, channel: usize, delta: T) -> Result<()> {
        let names = self.rb_names();
        let idx = names
            .iter()
            .position(|n| n == block)
            .ok_or_else(|| Error::Contract(format!("no reparameterizable block named `{block}`")))?;
        let mut i = idx;
        let groups = self.stem.iter_mut().chain(
            self.semantic
                .iter_mut()
                .zip(self.detail.iter_mut())
                .flat_map(|(a, b)| [a, b]),
        );
        for g in groups {
            if i < g.len() {
                let rb = &mut g[i];
                if channel >= rb.spec().out_channels {
                    return Err(Error::dim("perturb_bias", Axis::Channel, rb.spec().out_channels, channel));
                }
                *rb = rb.with_bias_offset(channel, delta)?;
                return Ok(());
            }
            i -= g.len();
        }
        unreachable!("block index within the listed names")
    }

    pub fn to_store(&self) -> Result<WeightStore> {
        let mut store = WeightStore::new();
        for (name, rb) in self.rb_slots().into_iter().take(self.stem.iter().map(Vec::len).sum()) {
            rb.export(&name, &mut store)?;
        }
        for s in 0..2 {
            for (branch, stages) in [("semantic", &self.semantic), ("detail", &self.detail)] {
                for (i, b) in stages[s].iter().enumerate() {
                    b.export(&format!("stage{}.{branch}.block{i}", s + 4), &mut store)?;
                }
            }
            if let Some(f) = &self.fusion[s] {
                f.export(&format!("fusion{}", s + 1), &mut store)?;
            }
            if s == 0 {
                if let Some(h) = &self.aux_head {
                    h.export("aux_head", &mut store)?;
                }
            }
        }
        for (branch, blocks) in [("semantic", &self.stage6_semantic), ("detail", &self.stage6_detail)] {
            for (i, b) in blocks.iter().enumerate() {
                b.export(&format!("stage6.{branch}.block{i}"), &mut store)?;
            }
        }
        match &self.context {
            Context::Rppm(p) => p.export("rppm", &mut store)?,
            Context::Project(u) => u.export("context.project", &mut store)?,
        }
        self.head.export("head", &mut store)?;
        Ok(store)
    }

    /// Learnable parameters (BN affine counts, running statistics do not).
    pub fn count_params(&self) -> usize {
        let rbs: usize = self.rb_slots().iter().map(|(_, b)| b.param_count()).sum();
        let fusion: usize = self.fusion.iter().flatten().map(FusionParams::param_count).sum();
        let bbs: usize = self.stage6_semantic.iter().chain(&self.stage6_detail).map(BbParams::param_count).sum();
        let aux = self.aux_head.as_ref().map_or(0, HeadParams::param_count);
        rbs + fusion + bbs + self.context.param_count() + self.head.param_count() + aux
    }

    /// Number of BN layers still present.
    pub fn bn_count(&self) -> usize {
        let rbs: usize = self.rb_slots().iter().map(|(_, b)| b.bn_count()).sum();
        let fusion: usize = self.fusion.iter().flatten().map(FusionParams::bn_count).sum();
        let bbs: usize = self.stage6_semantic.iter().chain(&self.stage6_detail).map(BbParams::bn_count).sum();
        let aux = self.aux_head.as_ref().map_or(0, HeadParams::bn_count);
        rbs + fusion + bbs + self.context.bn_count() + self.head.bn_count() + aux
    }

    /// Blocks that still hold parallel branches.
    pub fn multi_path_count(&self) -> usize {
        let rbs = self.rb_slots().iter().filter(|(_, b)| matches!(b.form, RbForm::Train(_))).count();
        let rppm = matches!(&self.context, Context::Rppm(p) if matches!(p.grouped, GroupedStage::Pair(..)));
        rbs + rppm as usize
    }

    /// Per-section parameters, cost and stage shapes for an `h x w` input,
    /// computed from specs alone.
    pub fn accounting(&self, h: usize, w: usize) -> Result<Accounting> {
        check_input(&self.def, self.def.in_channels, h, w)?;
        let mut sections = Vec::new();
        let mut shapes = Vec::new();
        let mut hw = (h, w);
        for (s, blocks) in self.stem.iter().enumerate() {
            let name = format!("stage{}", s + 1);
            let (params, cost, out) = rb_cost(blocks, hw)?;
            hw = out;
            shapes.push((name.clone(), [self.def.stem.widths[s], hw.0, hw.1]));
            sections.push(Section { name, params, cost });
        }
        let (mut hs, mut hd) = (hw, hw);
        for s in 0..2 {
            let stage = s + 4;
            let (ps, cs, os) = rb_cost(&self.semantic[s], hs)?;
            let (pd, cd, od) = rb_cost(&self.detail[s], hd)?;
            (hs, hd) = (os, od);
            let (ws, wd) = (self.def.semantic.widths[s], self.def.detail.widths[s]);
            shapes.push((format!("stage{stage}.semantic"), [ws, hs.0, hs.1]));
            shapes.push((format!("stage{stage}.detail"), [wd, hd.0, hd.1]));
            sections.push(Section { name: format!("stage{stage}"), params: ps + pd, cost: cs + cd });
            let fusion = match &self.fusion[s] {
                Some(f) => Section { name: format!("fusion{}", s + 1), params: f.param_count(), cost: f.cost(hs.0, hs.1) },
                None => Section {
                    name: format!("fusion{} (off: relu)", s + 1),
                    params: 0,
                    cost: Cost::elementwise(ws * hs.0 * hs.1 + wd * hd.0 * hd.1),
                },
            };
            sections.push(fusion);
            if s == 0 {
                if let Some(a) = &self.aux_head {
                    sections.push(Section { name: "aux_head".into(), params: a.param_count(), cost: a.cost(hd.0, hd.1, (h, w)) });
                }
            }
        }
        let (ps, cs, os) = bb_cost(&self.stage6_semantic, hs)?;
        let (pd, cd, od) = bb_cost(&self.stage6_detail, hd)?;
        (hs, hd) = (os, od);
        let (ws, wd) = (self.def.semantic.widths[2], self.def.detail.widths[2]);
        shapes.push(("stage6.semantic".into(), [ws, hs.0, hs.1]));
        shapes.push(("stage6.detail".into(), [wd, hd.0, hd.1]));
        sections.push(Section { name: "stage6".into(), params: ps + pd, cost: cs + cd });

        let out_c = self.context.out_channels();
        let mut ctx_cost = match &self.context {
            Context::Rppm(p) => p.cost(hs.0, hs.1)?,
            Context::Project(u) => u.cost(hs.0 * hs.1),
        };
        ctx_cost += Cost::elementwise((RESIZE_OPS + 1) * out_c * hd.0 * hd.1);
        shapes.push(("context".into(), [out_c, hs.0, hs.1]));
        let ctx_name = match &self.context {
            Context::Rppm(_) => "rppm",
            Context::Project(_) => "context.project",
        };
        sections.push(Section { name: ctx_name.into(), params: self.context.param_count(), cost: ctx_cost });
        sections.push(Section { name: "head".into(), params: self.head.param_count(), cost: self.head.cost(hd.0, hd.1, (h, w)) });
        shapes.push(("head".into(), [self.def.num_classes, h, w]));
        Ok(Accounting { input_hw: (h, w), sections, shapes })
    }
}

/// Maximum absolute difference between two networks at every traced point
/// both report, in execution order.
pub fn trace_diff<T: Element>(a: &Network<T>, b: &Network<T>, x: &Tensor4<T>) -> Result<Vec<(String, f64)>> {
    let mut first: Vec<(String, Tensor4<T>)> = Vec::new();
    a.forward_traced(x, false, &mut |n, t| first.push((n.to_string(), t.clone())))?;
    let mut out = Vec::new();
    b.forward_traced(x, false, &mut |n, t| {
        if let Some((_, u)) = first.iter().find(|(m, _)| m == n) {
            out.push((n.to_string(), u.max_abs_diff(t).unwrap_or(f64::INFINITY)));
        }
    })?;
    Ok(out)
}

/// Reference figures to compare an accounting against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub params_m: f64,
    pub gflops: f64,
}

impl Reference {
    /// Published figures for the named presets at 1024x2048.
    pub fn for_preset(name: &str) -> Option<Self> {
        let (params_m, gflops) = match name {
            "rdrnet-s-simple" => (7.2, 41.0),
            "rdrnet-s" => (7.3, 43.4),
            "rdrnet-m" => (26.0, 162.0),
            "rdrnet-l" => (36.9, 238.0),
            _ => return None,
        };
        Some(Reference { params_m, gflops })
    }
}

/// Human-readable accounting report for a deployment-structure network.
pub fn accounting_report<T: Element>(net: &Network<T>, h: usize, w: usize, reference: Option<Reference>) -> Result<String> {
    let acc = net.accounting(h, w)?;
    let mut s = String::new();
    let def = net.def();
    let _ = writeln!(s, "# {} ({} structure) at {h}x{w}", def.name, net.structure());
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:>12} {:>12} {:>12}", "section", "params", "GMACs", "GFLOPs");
    for sec in &acc.sections {
        let _ = writeln!(
            s,
            "{:<24} {:>12} {:>12.3} {:>12.3}",
            sec.name,
            sec.params,
            sec.cost.macs as f64 / 1e9,
            sec.cost.flops() as f64 / 1e9
        );
    }
    let total = acc.cost();
    let _ = writeln!(
        s,
        "{:<24} {:>12} {:>12.3} {:>12.3}",
        "total",
        acc.params(),
        total.macs as f64 / 1e9,
        total.flops() as f64 / 1e9
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "params: {:.3} M", acc.params() as f64 / 1e6);
    let _ = writeln!(s, "conv MACs: {:.2} G", total.macs as f64 / 1e9);
    let _ = writeln!(s, "FLOPs (2 x MACs + elementwise): {:.2} G", total.flops() as f64 / 1e9);
    if let Some(r) = reference {
        let dp = 100.0 * (acc.params() as f64 / 1e6 / r.params_m - 1.0);
        let dm = 100.0 * (total.macs as f64 / 1e9 / r.gflops - 1.0);
        let df = 100.0 * (total.flops() as f64 / 1e9 / r.gflops - 1.0);
        let _ = writeln!(s);
        let _ = writeln!(s, "reference: {:.1} M params, {:.1} GFLOPs", r.params_m, r.gflops);
        let _ = writeln!(s, "params deviation: {dp:+.2}%");
        let _ = writeln!(s, "conv MACs vs reference GFLOPs: {dm:+.2}%");
        let _ = writeln!(s, "2 x MACs + elementwise vs reference GFLOPs: {df:+.2}%");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "conventions:");
    let _ = writeln!(s, "- params are learnable values: conv weights and biases; BN running statistics are buffers");
    let _ = writeln!(s, "- deployment structure: BNs folded into conv biases, aux head dropped (training only)");
    let _ = writeln!(s, "- the reference GFLOPs column follows the common convention of counting one multiply-accumulate as one operation, so it is compared against conv MACs; the FLOPs line counts a MAC as two operations and adds BN, bias, ReLU, add, pooling and resize work");
    let _ = writeln!(s, "- the head includes the final bilinear resize of the logits to the input size");
    let _ = writeln!(s, "- pyramid pooling branch width: {} channels", def.ppm_channels);
    Ok(s)
}
