//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rdrnet_core::ops::BnParams;
use rdrnet_core::{Dims, Element, NetworkDef, Tensor4};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-scale, scale)`.
pub fn rand_tensor<T: Element>(rng: &mut ChaCha8Rng, dims: Dims, scale: f64) -> Tensor4<T> {
    Tensor4::from_fn(dims, |_, _, _, _| T::from_f64(rng.gen_range(-scale..scale)))
}

pub fn rand_vec<T: Element>(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..len).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect()
}

pub fn rand_bn<T: Element>(rng: &mut ChaCha8Rng, channels: usize) -> BnParams<T> {
    BnParams {
        gamma: rand_vec(rng, channels, 0.5, 1.5),
        beta: rand_vec(rng, channels, -0.5, 0.5),
        mean: rand_vec(rng, channels, -0.5, 0.5),
        var: rand_vec(rng, channels, 0.25, 2.0),
        eps: T::from_f64(1e-5),
    }
}

/// Textbook zero-padded grouped cross-correlation, accumulated in f64.
pub fn conv_oracle<T: Element>(
    x: &Tensor4<T>,
    weight: &Tensor4<T>,
    bias: Option<&[T]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor4<f64> {
    let d = x.dims();
    let wd = weight.dims();
    let (cout, cig, k) = (wd.n, wd.c, wd.h);
    let cog = cout / groups;
    let oh = (d.h + 2 * padding - k) / stride + 1;
    let ow = (d.w + 2 * padding - k) / stride + 1;
    Tensor4::from_fn(Dims::new(d.n, cout, oh, ow), |n, o, i, j| {
        let g = o / cog;
        let mut acc = bias.map_or(0.0, |b| b[o].as_f64());
        for ci in 0..cig {
            for kh in 0..k {
                for kw in 0..k {
                    let (y, x_) = ((i * stride + kh) as isize - padding as isize, (j * stride + kw) as isize - padding as isize);
                    if y < 0 || x_ < 0 || y as usize >= d.h || x_ as usize >= d.w {
                        continue;
                    }
                    acc += weight.at(o, ci, kh, kw).as_f64() * x.at(n, g * cig + ci, y as usize, x_ as usize).as_f64();
                }
            }
        }
        acc
    })
}

/// Per-channel BN on an f64 tensor.
pub fn bn_oracle<T: Element>(x: &Tensor4<f64>, bn: &BnParams<T>) -> Tensor4<f64> {
    Tensor4::from_fn(x.dims(), |n, c, h, w| {
        let s = (bn.var[c].as_f64() + bn.eps.as_f64()).sqrt();
        bn.gamma[c].as_f64() * (x.at(n, c, h, w) - bn.mean[c].as_f64()) / s + bn.beta[c].as_f64()
    })
}

pub fn max_diff<A: Element, B: Element>(a: &Tensor4<A>, b: &Tensor4<B>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max)
}

/// `(in, out, stride)` of every reparameterizable block, in execution order
/// (stem, then stage 4 semantic/detail, then stage 5 semantic/detail).
pub fn rb_list(def: &NetworkDef) -> Vec<(usize, usize, usize)> {
    let mut v = Vec::new();
    let mut push = |cin: usize, cout: usize, n: usize, down: bool| {
        for i in 0..n {
            v.push((if i == 0 { cin } else { cout }, cout, if down && i == 0 { 2 } else { 1 }));
        }
    };
    let mut w = def.in_channels;
    for s in 0..3 {
        push(w, def.stem.widths[s], def.stem.blocks[s], true);
        w = def.stem.widths[s];
    }
    let (mut ws, mut wd) = (w, w);
    for s in 0..2 {
        push(ws, def.semantic.widths[s], def.semantic.blocks[s], true);
        push(wd, def.detail.widths[s], def.detail.blocks[s], false);
        (ws, wd) = (def.semantic.widths[s], def.detail.widths[s]);
    }
    v
}

/// Conv plus either a BN (`2 * out` affine values) or a bias.
fn cb(cin: usize, cout: usize, k: usize, groups: usize, deploy: bool) -> usize {
    cin / groups * cout * k * k + if deploy { cout } else { 2 * cout }
}

fn bb(cin: usize, cout: usize, stride: usize, deploy: bool) -> usize {
    let mid = cout / 2;
    let project = if stride != 1 || cin != cout { cb(cin, cout, 1, 1, deploy) } else { 0 };
    cb(cin, mid, 1, 1, deploy) + cb(mid, mid, 3, 1, deploy) + cb(mid, cout, 1, 1, deploy) + project
}

fn head(def: &NetworkDef, cin: usize, deploy: bool) -> usize {
    cb(cin, def.head_channels, 3, 1, deploy) + def.head_channels * def.num_classes + def.num_classes
}

/// Parameters of the reparameterizable blocks alone.
pub fn rb_params(def: &NetworkDef, deploy: bool) -> usize {
    let ab = def.ablation;
    rb_list(def)
        .into_iter()
        .map(|(cin, cout, stride)| {
            if deploy {
                return cin * cout * 9 + cout;
            }
            let mut p = cb(cin, cout, 3, 1, false);
            if ab.num_1x1 > 0 {
                p += cb(cin, cout, 1, 1, false) + (ab.num_1x1 - 1) * cb(cout, cout, 1, 1, false);
            }
            if ab.residual && ab.residual_bn && stride == 1 && cin == cout {
                p += 2 * cout;
            }
            p
        })
        .sum()
}

pub fn fusion1_params(def: &NetworkDef, deploy: bool) -> usize {
    let (s, d) = (def.semantic.widths[0], def.detail.widths[0]);
    cb(s, d, 1, 1, deploy) + cb(d, s, 3, 1, deploy)
}

pub fn fusion2_params(def: &NetworkDef, deploy: bool) -> usize {
    let (s, d) = (def.semantic.widths[1], def.detail.widths[1]);
    cb(s, d, 1, 1, deploy) + cb(d, 2 * d, 3, 1, deploy) + cb(2 * d, s, 3, 1, deploy)
}

pub fn rppm_params(def: &NetworkDef, deploy: bool) -> usize {
    let (cin, b, out) = (def.semantic.widths[2], def.ppm_channels, def.detail.widths[2]);
    let pairs = if deploy { 1 } else { 2 };
    5 * cb(cin, b, 1, 1, deploy) + pairs * cb(4 * b, 4 * b, 3, 4, deploy) + cb(5 * b, out, 1, 1, deploy) + cb(cin, out, 1, 1, deploy)
}

pub fn project_params(def: &NetworkDef, deploy: bool) -> usize {
    cb(def.semantic.widths[2], def.detail.widths[2], 1, 1, deploy)
}

/// Learnable parameter count derived from the definition alone.
pub fn expected_params(def: &NetworkDef, deploy: bool) -> usize {
    let ab = def.ablation;
    let (sw, dw) = (def.semantic.widths, def.detail.widths);
    let mut total = rb_params(def, deploy);
    if ab.fusion1 {
        total += fusion1_params(def, deploy);
    }
    if ab.fusion2 {
        total += fusion2_params(def, deploy);
    }
    if !deploy && def.aux_head {
        total += head(def, dw[0], false);
    }
    for (cin, cout, n, stride) in [(sw[1], sw[2], def.semantic.blocks[2], 2), (dw[1], dw[2], def.detail.blocks[2], 1)] {
        total += bb(cin, cout, stride, deploy) + (n - 1) * bb(cout, cout, 1, deploy);
    }
    total += if ab.rppm { rppm_params(def, deploy) } else { project_params(def, deploy) };
    total + head(def, dw[2], deploy)
}

fn out_size(size: usize, k: usize, s: usize, p: usize) -> usize {
    (size + 2 * p - k) / s + 1
}

/// Deployment-structure convolution MACs for an `h x w` input, derived from
/// the definition alone.
pub fn expected_macs(def: &NetworkDef, h: usize, w: usize) -> u64 {
    let ab = def.ablation;
    let px = |f: usize| ((h / f) * (w / f)) as u64;
    let mut macs = 0u64;
    // stem and branch blocks: the stem halves resolution per stage
    let mut res = vec![];
    let mut f = 1;
    for s in 0..3 {
        for i in 0..def.stem.blocks[s] {
            if i == 0 {
                f *= 2;
            }
            res.push(f);
        }
    }
    let mut fs = f;
    for s in 0..2 {
        for i in 0..def.semantic.blocks[s] {
            if i == 0 {
                fs *= 2;
            }
            res.push(fs);
        }
        res.extend(std::iter::repeat_n(8, def.detail.blocks[s]));
    }
    // rb_list order is stem, then per stage semantic then detail
    for ((cin, cout, _), f) in rb_list(def).into_iter().zip(res) {
        macs += (cin * cout * 9) as u64 * px(f);
    }
    let (sw, dw) = (def.semantic.widths, def.detail.widths);
    if ab.fusion1 {
        macs += (sw[0] * dw[0]) as u64 * px(16) + (9 * dw[0] * sw[0]) as u64 * px(16);
    }
    if ab.fusion2 {
        macs += (sw[1] * dw[1]) as u64 * px(32)
            + (9 * dw[1] * 2 * dw[1]) as u64 * px(16)
            + (9 * 2 * dw[1] * sw[1]) as u64 * px(32);
    }
    let bb = |cin: usize, cout: usize, stride: usize, fin: usize| -> u64 {
        let mid = cout / 2;
        let fout = fin * stride;
        let project = if stride != 1 || cin != cout { (cin * cout) as u64 * px(fout) } else { 0 };
        (cin * mid) as u64 * px(fin) + (9 * mid * mid) as u64 * px(fout) + (mid * cout) as u64 * px(fout) + project
    };
    macs += bb(sw[1], sw[2], 2, 32) + (def.semantic.blocks[2] as u64 - 1) * bb(sw[2], sw[2], 1, 64);
    macs += bb(dw[1], dw[2], 1, 8) + (def.detail.blocks[2] as u64 - 1) * bb(dw[2], dw[2], 1, 8);
    let (cin, b, out) = (sw[2], def.ppm_channels, dw[2]);
    let (ch, cw) = (h / 64, w / 64);
    let p = (ch * cw) as u64;
    if ab.rppm {
        macs += (cin * b) as u64 * p;
        for (k, s) in [(5, 2), (9, 4), (17, 8)] {
            macs += (cin * b * out_size(ch, k, s, k / 2) * out_size(cw, k, s, k / 2)) as u64;
        }
        macs += (cin * b) as u64;
        macs += (4 * b * b * 9) as u64 * p + (5 * b * out) as u64 * p + (cin * out) as u64 * p;
    } else {
        macs += (cin * out) as u64 * p;
    }
    macs + (9 * dw[2] * def.head_channels) as u64 * px(8) + (def.head_channels * def.num_classes) as u64 * px(8)
}
