//! 2-D cross-correlation with zero padding and channel groups.
//!
//! Two implementations share one accumulation order: for every output
//! element the sum starts at zero, visits taps in `(ci, kh, kw)` order
//! (padded taps contribute `w * 0`), and the bias is added last. The packed
//! im2col path is therefore bit-identical to [`conv2d_direct`] in both
//! precisions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::tensor::{Dims, Element, Tensor4};

/// Convolution hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::InvalidConv(format!(
                "kernel, stride and groups must be positive: {self:?}"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConv(format!("empty channel count: {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidConv(format!(
                "{} -> {} channels not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// `floor((size + 2p - k) / s) + 1`, rejecting non-positive results.
    pub fn output_size(&self, size: usize, axis: Axis) -> Result<usize> {
        let padded = size + 2 * self.padding;
        if size == 0 || padded < self.kernel {
            return Err(Error::dim("conv2d", axis, self.kernel, padded));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.output_size(h, Axis::Height)?,
            self.output_size(w, Axis::Width)?,
        ))
    }

    pub fn weight_dims(&self) -> Dims {
        Dims::new(self.out_channels, self.in_per_group(), self.kernel, self.kernel)
    }

    /// Weight element count, bias excluded.
    pub fn weight_len(&self) -> usize {
        self.weight_dims().len()
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> usize {
        self.weight_len()
    }
}

/// Convolution weight `(out, in/groups, k, k)` and optional per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor4<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvWeights<T> {
    pub fn new(weight: Tensor4<T>, bias: Option<Vec<T>>) -> Self {
        ConvWeights { weight, bias }
    }

    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        spec.validate()?;
        let want = spec.weight_dims();
        let got = self.weight.dims();
        let pairs = [
            (Axis::Channel, want.n, got.n),
            (Axis::Channel, want.c, got.c),
            (Axis::Kernel, want.h, got.h),
            (Axis::Kernel, want.w, got.w),
        ];
        for (axis, e, a) in pairs {
            if e != a {
                return Err(Error::dim("conv weight", axis, e, a));
            }
        }
        if let Some(b) = &self.bias {
            if b.len() != spec.out_channels {
                return Err(Error::dim("conv bias", Axis::Channel, spec.out_channels, b.len()));
            }
        }
        Ok(())
    }
}

fn output_dims<T: Element>(x: &Tensor4<T>, spec: &ConvSpec, w: &ConvWeights<T>) -> Result<Dims> {
    w.check(spec)?;
    let d = x.dims();
    if d.c != spec.in_channels {
        return Err(Error::dim("conv2d", Axis::Channel, spec.in_channels, d.c));
    }
    let (oh, ow) = spec.output_hw(d.h, d.w)?;
    Ok(Dims::new(d.n, spec.out_channels, oh, ow))
}

/// Reference convolution: a fixed loop nest with no reordering.
pub fn conv2d_direct<T: Element>(
    x: &Tensor4<T>,
    spec: &ConvSpec,
    w: &ConvWeights<T>,
) -> Result<Tensor4<T>> {
    let od = output_dims(x, spec, w)?;
    let d = x.dims();
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let (cig, cog) = (spec.in_per_group(), spec.out_per_group());
    let wd = w.weight.data();
    let xd = x.data();
    let mut out = Vec::with_capacity(od.len());
    for n in 0..od.n {
        for co in 0..od.c {
            let g = co / cog;
            for oh in 0..od.h {
                for ow in 0..od.w {
                    let mut acc = T::zero();
                    for ci in 0..cig {
                        let cin = g * cig + ci;
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = (oh * s + kh) as isize - p as isize;
                                let iw = (ow * s + kw) as isize - p as isize;
                                let v = if ih >= 0
                                    && iw >= 0
                                    && (ih as usize) < d.h
                                    && (iw as usize) < d.w
                                {
                                    xd[((n * d.c + cin) * d.h + ih as usize) * d.w + iw as usize]
                                } else {
                                    T::zero()
                                };
                                let wv = wd[((co * cig + ci) * k + kh) * k + kw];
                                acc = acc + wv * v;
                            }
                        }
                    }
                    if let Some(b) = &w.bias {
                        acc = acc + b[co];
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

/// Output pixels per packed strip, in register tiles.
const STRIP_TILES: usize = 4;

/// Convolution via packed im2col strips and a register-tiled GEMM.
///
/// Strips of output pixels are independent and may run on the rayon pool;
/// within a strip every accumulator follows the reference order.
pub fn conv2d<T: Element>(
    x: &Tensor4<T>,
    spec: &ConvSpec,
    w: &ConvWeights<T>,
) -> Result<Tensor4<T>> {
    let od = output_dims(x, spec, w)?;
    let d = x.dims();
    let (cig, cog) = (spec.in_per_group(), spec.out_per_group());
    let kk = spec.kernel * spec.kernel;
    let k_len = cig * kk;
    let (mr, nr) = (T::MR, T::NR);
    let blocks = cog.div_ceil(mr);
    let pixels = od.plane();
    let strip = nr * STRIP_TILES;
    let strips = pixels.div_ceil(strip);
    let wd = w.weight.data();

    let mut out = vec![T::zero(); od.len()];
    for g in 0..spec.groups {
        // [block][k][r], zero rows past the group's last channel
        let mut wpack = vec![T::zero(); blocks * k_len * mr];
        for b in 0..blocks {
            for r in 0..mr {
                let co = b * mr + r;
                if co >= cog {
                    break;
                }
                let row = &wd[(g * cog + co) * k_len..(g * cog + co + 1) * k_len];
                for (k, &v) in row.iter().enumerate() {
                    wpack[(b * k_len + k) * mr + r] = v;
                }
            }
        }
        let bias = w.bias.as_ref().map(|b| &b[g * cog..(g + 1) * cog]);

        for n in 0..d.n {
            let input = Im2Col {
                data: &x.data()[(n * d.c + g * cig) * d.plane()..(n * d.c + (g + 1) * cig) * d.plane()],
                h: d.h,
                w: d.w,
                ow: od.w,
                kernel: spec.kernel,
                stride: spec.stride,
                padding: spec.padding,
            };
            let computed: Vec<(usize, Vec<T>)> = (0..strips)
                .into_par_iter()
                .map_init(Vec::new, |panel, s| {
                    let p0 = s * strip;
                    let len = strip.min(pixels - p0);
                    let tiles = len.div_ceil(nr);
                    panel.resize(tiles * k_len * nr, T::zero());
                    input.pack(p0, len, k_len, panel);
                    let mut res = vec![T::zero(); cog * len];
                    let mut acc = vec![T::zero(); mr * nr];
                    for b in 0..blocks {
                        let wb = &wpack[b * k_len * mr..(b + 1) * k_len * mr];
                        for t in 0..tiles {
                            acc.iter_mut().for_each(|a| *a = T::zero());
                            T::gemm_tile(k_len, wb, &panel[t * k_len * nr..(t + 1) * k_len * nr], &mut acc);
                            let cols = nr.min(len - t * nr);
                            for r in 0..mr.min(cog - b * mr) {
                                let co = b * mr + r;
                                let dst = &mut res[co * len + t * nr..co * len + t * nr + cols];
                                let src = &acc[r * nr..r * nr + cols];
                                match bias {
                                    Some(bias) => {
                                        for (o, &a) in dst.iter_mut().zip(src) {
                                            *o = a + bias[co];
                                        }
                                    }
                                    None => dst.copy_from_slice(src),
                                }
                            }
                        }
                    }
                    (p0, res)
                })
                .collect();
            for (p0, res) in computed {
                let len = res.len() / cog;
                for co in 0..cog {
                    let base = (n * od.c + g * cog + co) * pixels + p0;
                    out[base..base + len].copy_from_slice(&res[co * len..(co + 1) * len]);
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

/// Input planes of one group of one batch item.
struct Im2Col<'a, T> {
    data: &'a [T],
    h: usize,
    w: usize,
    ow: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl<T: Element> Im2Col<'_, T> {
    /// Fills every entry of `panel[t][k][j]` for output pixels
    /// `p0..p0+len`; padding taps and columns past `len` become zero.
    fn pack(&self, p0: usize, len: usize, k_len: usize, panel: &mut [T]) {
        let nr = T::NR;
        let tiles = len.div_ceil(nr);
        let kk = self.kernel * self.kernel;
        let plane = self.h * self.w;
        let (s, pad) = (self.stride, self.padding);
        for k in 0..k_len {
            let ci = k / kk;
            let kh = (k % kk) / self.kernel;
            let kw = k % self.kernel;
            let src = &self.data[ci * plane..(ci + 1) * plane];
            let mut put = |i: usize, v: T| panel[((i / nr) * k_len + k) * nr + i % nr] = v;
            let mut i = 0;
            while i < len {
                let (oh, ow0) = ((p0 + i) / self.ow, (p0 + i) % self.ow);
                let run = (self.ow - ow0).min(len - i);
                let ih = oh * s + kh;
                if ih < pad || ih - pad >= self.h {
                    (i..i + run).for_each(|j| put(j, T::zero()));
                } else {
                    let row = &src[(ih - pad) * self.w..(ih - pad + 1) * self.w];
                    // ow in [lo, hi) maps inside the row
                    let lo = pad.saturating_sub(kw).div_ceil(s).clamp(ow0, ow0 + run);
                    let hi = ((self.w + pad).saturating_sub(kw)).div_ceil(s).clamp(lo, ow0 + run);
                    (ow0..lo).for_each(|ow| put(i + ow - ow0, T::zero()));
                    for ow in lo..hi {
                        put(i + ow - ow0, row[ow * s + kw - pad]);
                    }
                    (hi..ow0 + run).for_each(|ow| put(i + ow - ow0, T::zero()));
                }
                i += run;
            }
            (len..tiles * nr).for_each(|j| put(j, T::zero()));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random<T: Element>(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<T> {
        Tensor4::from_fn(dims, |_, _, _, _| T::from_f64(rng.gen_range(-1.0..1.0)))
    }

    fn random_conv<T: Element>(rng: &mut ChaCha8Rng, spec: &ConvSpec, bias: bool) -> ConvWeights<T> {
        let weight = random(rng, spec.weight_dims());
        let bias = bias.then(|| (0..spec.out_channels).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect());
        ConvWeights::new(weight, bias)
    }

    #[test]
    fn ones_kernel_on_ones_counts_taps() {
        let x = Tensor4::<f64>::full(Dims::new(1, 1, 3, 3), 1.0);
        let spec = ConvSpec::new(1, 1, 3, 1);
        let w = ConvWeights::new(Tensor4::full(spec.weight_dims(), 1.0), Some(vec![0.0]));
        let y = conv2d(&x, &spec, &w).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(conv2d_direct(&x, &spec, &w).unwrap(), y);
    }

    #[test]
    fn identity_1x1_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random::<f32>(&mut rng, Dims::new(2, 5, 7, 6));
        let spec = ConvSpec::new(5, 5, 1, 1);
        let w = Tensor4::from_fn(spec.weight_dims(), |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let y = conv2d(&x, &spec, &ConvWeights::new(w, Some(vec![0.0; 5]))).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn stride_two_halves_stage_one_height() {
        let spec = ConvSpec::new(3, 32, 3, 2);
        assert_eq!(spec.output_hw(1024, 2048).unwrap(), (512, 1024));
        assert_eq!(spec.output_hw(7, 5).unwrap(), (4, 3));
    }

    #[test]
    fn zero_size_output_is_rejected() {
        let spec = ConvSpec::new(1, 1, 3, 1).with_padding(0);
        let err = spec.output_size(2, Axis::Width).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Width, .. }));
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor4::<f32>::zeros(Dims::new(1, 3, 4, 4));
        let spec = ConvSpec::new(4, 2, 3, 1);
        let w = ConvWeights::new(Tensor4::zeros(spec.weight_dims()), None);
        match conv2d(&x, &spec, &w).unwrap_err() {
            Error::Dimension { axis, expected, actual, .. } => {
                assert_eq!((axis, expected, actual), (Axis::Channel, 4, 3));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_group_split_is_rejected() {
        let spec = ConvSpec::new(6, 4, 3, 1).with_groups(4);
        assert!(matches!(spec.validate(), Err(Error::InvalidConv(_))));
    }

    #[test]
    fn gemm_path_is_bitwise_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [
            (ConvSpec::new(3, 8, 3, 2), 11, 9),
            (ConvSpec::new(8, 5, 1, 1), 6, 13),
            (ConvSpec::new(8, 8, 1, 2), 6, 8),
            (ConvSpec::new(8, 12, 3, 1).with_groups(4), 5, 7),
            (ConvSpec::new(4, 6, 3, 1).with_padding(0), 9, 4),
            (ConvSpec::new(2, 3, 5, 3), 12, 17),
        ];
        for (spec, h, w) in cases {
            for bias in [true, false] {
                let x64 = random::<f64>(&mut rng, Dims::new(2, spec.in_channels, h, w));
                let w64 = random_conv::<f64>(&mut rng, &spec, bias);
                let a = conv2d(&x64, &spec, &w64).unwrap();
                let b = conv2d_direct(&x64, &spec, &w64).unwrap();
                assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));

                let x32 = x64.cast::<f32>();
                let w32 = ConvWeights::new(w64.weight.cast(), w64.bias.as_ref().map(|b| b.iter().map(|&v| v as f32).collect()));
                let a = conv2d(&x32, &spec, &w32).unwrap();
                let b = conv2d_direct(&x32, &spec, &w32).unwrap();
                assert!(a.max_abs_diff(&b).unwrap() <= 1e-5);
            }
        }
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(16, 16, 3, 1);
        let x = random::<f32>(&mut rng, Dims::new(1, 16, 20, 21));
        let w = random_conv::<f32>(&mut rng, &spec, true);
        let a = conv2d(&x, &spec, &w).unwrap();
        let b = conv2d(&x, &spec, &w).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
