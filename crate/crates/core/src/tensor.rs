//! Dense NCHW tensors.

use std::fmt;

use num_traits::Float;

use crate::error::{Axis, Error, Result};

/// Element precision tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => f.write_str("f32"),
            DType::F64 => f.write_str("f64"),
        }
    }
}

/// Floating-point element type. `f32` is the deployment precision; `f64`
/// exists to make equivalence checks sharp.
pub trait Element:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Output tile of `acc[r * NR + j] += w[k * MR + r] * panel[k * NR + j]`
    /// over `k` in ascending order. Each accumulator sees its products in the
    /// same order as the direct loop nest, so the GEMM path stays bit-identical
    /// to the reference convolution.
    fn gemm_tile(k_len: usize, wpack: &[Self], panel: &[Self], acc: &mut [Self]);

    /// Rows of the register tile.
    const MR: usize;
    /// Columns of the register tile.
    const NR: usize;
}

macro_rules! impl_element {
    ($t:ty, $dtype:expr, $mr:literal, $nr:literal) => {
        impl Element for $t {
            const DTYPE: DType = $dtype;
            const MR: usize = $mr;
            const NR: usize = $nr;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            #[inline(never)]
            fn gemm_tile(k_len: usize, wpack: &[Self], panel: &[Self], acc: &mut [Self]) {
                let wpack = &wpack[..k_len * $mr];
                let panel = &panel[..k_len * $nr];
                let mut tile = [[0.0 as $t; $nr]; $mr];
                for (r, row) in tile.iter_mut().enumerate() {
                    row.copy_from_slice(&acc[r * $nr..(r + 1) * $nr]);
                }
                for (w, col) in wpack.chunks_exact($mr).zip(panel.chunks_exact($nr)) {
                    let col: &[$t; $nr] = col.try_into().unwrap();
                    for r in 0..$mr {
                        let wr = w[r];
                        let row = &mut tile[r];
                        for j in 0..$nr {
                            row[j] += wr * col[j];
                        }
                    }
                }
                for (r, row) in tile.iter().enumerate() {
                    acc[r * $nr..(r + 1) * $nr].copy_from_slice(row);
                }
            }
        }
    };
}

impl_element!(f32, DType::F32, 4, 16);
impl_element!(f64, DType::F64, 4, 8);

/// NCHW dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.h, self.w)
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array in NCHW layout. Immutable once constructed.
#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim("tensor", Axis::Length, dims.len(), data.len()));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor4 {
            dims,
            data: vec![T::zero(); dims.len()],
        }
    }

    pub fn full(dims: Dims, value: T) -> Self {
        Tensor4 {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for n in 0..dims.n {
            for c in 0..dims.c {
                for h in 0..dims.h {
                    for w in 0..dims.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + h) * self.dims.w + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    /// Contiguous `h*w` plane of one channel.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference, computed in f64.
    pub fn max_abs_diff(&self, other: &Tensor4<T>) -> Result<f64> {
        check_same_dims("max_abs_diff", self.dims, other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64().abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects batch item `n` as a single-item tensor.
    pub fn item(&self, n: usize) -> Tensor4<T> {
        let per = self.dims.c * self.dims.plane();
        Tensor4 {
            dims: Dims::new(1, self.dims.c, self.dims.h, self.dims.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }
}

pub(crate) fn check_same_dims(op: &'static str, a: Dims, b: Dims) -> Result<()> {
    let pairs = [
        (Axis::Batch, a.n, b.n),
        (Axis::Channel, a.c, b.c),
        (Axis::Height, a.h, b.h),
        (Axis::Width, a.w, b.w),
    ];
    for (axis, x, y) in pairs {
        if x != y {
            return Err(Error::dim(op, axis, x, y));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_dims() {
        let err = Tensor4::<f32>::from_vec(Dims::new(1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(err, Error::Dimension { axis: Axis::Length, expected: 8, actual: 7, .. }));
    }

    #[test]
    fn index_is_row_major_nchw() {
        let t = Tensor4::<f64>::from_fn(Dims::new(2, 3, 4, 5), |n, c, h, w| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[t.index(1, 2, 3, 4)], 1234.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 1234.0);
        assert_eq!(t.item(1).at(0, 2, 3, 4), 1234.0);
    }

    #[test]
    fn gemm_tile_accumulates_in_k_order() {
        let k_len = 3;
        let wpack: Vec<f64> = (0..k_len * f64::MR).map(|i| i as f64 + 1.0).collect();
        let panel: Vec<f64> = (0..k_len * f64::NR).map(|i| (i % 5) as f64 - 2.0).collect();
        let mut acc = vec![0.5; f64::MR * f64::NR];
        f64::gemm_tile(k_len, &wpack, &panel, &mut acc);
        for r in 0..f64::MR {
            for j in 0..f64::NR {
                let mut expect = 0.5;
                for k in 0..k_len {
                    expect += wpack[k * f64::MR + r] * panel[k * f64::NR + j];
                }
                assert_eq!(acc[r * f64::NR + j], expect);
            }
        }
    }
}
