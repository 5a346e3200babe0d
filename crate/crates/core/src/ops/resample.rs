//! Bilinear resizing and average pooling.
//!
//! Conventions: bilinear sampling uses half-pixel centers (corners are not
//! aligned), and windowed average pooling divides by the full window area,
//! padded zeros included.

use crate::error::{Axis, Error, Result};
use crate::tensor::{Dims, Element, Tensor4};

/// Source taps `(i0, i1, frac)` for each destination index along one axis.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Resizes the spatial dims to `(out_h, out_w)`.
pub fn resize_bilinear<T: Element>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    let d = x.dims();
    if d.h == 0 || d.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::dim("resize_bilinear", Axis::Height, out_h.max(1), 0));
    }
    let od = Dims::new(d.n, d.c, out_h, out_w);
    if (d.h, d.w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = taps(d.h, out_h);
    let cols: Vec<(usize, usize, T)> = taps(d.w, out_w)
        .into_iter()
        .map(|(a, b, f)| (a, b, T::from_f64(f)))
        .collect();
    let mut out = Vec::with_capacity(od.len());
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = x.plane(n, c);
            for &(r0, r1, fr) in &rows {
                let fr = T::from_f64(fr);
                let (top, bot) = (&plane[r0 * d.w..(r0 + 1) * d.w], &plane[r1 * d.w..(r1 + 1) * d.w]);
                for &(c0, c1, fc) in &cols {
                    let t = top[c0] + fc * (top[c1] - top[c0]);
                    let b = bot[c0] + fc * (bot[c1] - bot[c0]);
                    out.push(t + fr * (b - t));
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

/// Multiplies both spatial dims by `factor`.
pub fn bilinear_upsample<T: Element>(x: &Tensor4<T>, factor: usize) -> Result<Tensor4<T>> {
    if factor < 2 {
        return Err(Error::Contract(format!("upsample factor must be >= 2, got {factor}")));
    }
    let d = x.dims();
    resize_bilinear(x, d.h * factor, d.w * factor)
}

/// Square average-pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolWindow {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolWindow {
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let size = |s: usize, axis| {
            let padded = s + 2 * self.padding;
            if self.stride == 0 || s == 0 || padded < self.kernel {
                Err(Error::dim("avg_pool", axis, self.kernel, padded))
            } else {
                Ok((padded - self.kernel) / self.stride + 1)
            }
        };
        Ok((size(h, Axis::Height)?, size(w, Axis::Width)?))
    }
}

pub fn avg_pool<T: Element>(x: &Tensor4<T>, window: PoolWindow) -> Result<Tensor4<T>> {
    let d = x.dims();
    let (oh, ow) = window.output_hw(d.h, d.w)?;
    let od = Dims::new(d.n, d.c, oh, ow);
    let PoolWindow { kernel: k, stride: s, padding: p } = window;
    let area = T::from_f64((k * k) as f64);
    let mut out = Vec::with_capacity(od.len());
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = x.plane(n, c);
            for i in 0..oh {
                let h0 = (i * s) as isize - p as isize;
                let (hs, he) = (h0.max(0) as usize, ((h0 + k as isize) as usize).min(d.h));
                for j in 0..ow {
                    let w0 = (j * s) as isize - p as isize;
                    let (ws, we) = (w0.max(0) as usize, ((w0 + k as isize) as usize).min(d.w));
                    let mut sum = T::zero();
                    for h in hs..he {
                        for v in &plane[h * d.w + ws..h * d.w + we] {
                            sum = sum + *v;
                        }
                    }
                    out.push(sum / area);
                }
            }
        }
    }
    Tensor4::from_vec(od, out)
}

/// Mean over each channel plane, producing `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Element>(x: &Tensor4<T>) -> Tensor4<T> {
    let d = x.dims();
    let count = T::from_f64(d.plane() as f64);
    Tensor4::from_fn(Dims::new(d.n, d.c, 1, 1), |n, c, _, _| {
        x.plane(n, c).iter().fold(T::zero(), |a, &v| a + v) / count
    })
}
