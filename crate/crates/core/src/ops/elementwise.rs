use crate::error::{Axis, Error, Result};
use crate::tensor::{check_same_dims, Dims, Element, Tensor4};

pub fn relu<T: Element>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn add<T: Element>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    check_same_dims("add", a.dims(), b.dims())?;
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p + q).collect();
    Tensor4::from_vec(a.dims(), data)
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Element>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?
        .dims();
    let mut channels = 0;
    for p in parts {
        let d = p.dims();
        for (axis, e, a) in [(Axis::Batch, first.n, d.n), (Axis::Height, first.h, d.h), (Axis::Width, first.w, d.w)] {
            if e != a {
                return Err(Error::dim("concat", axis, e, a));
            }
        }
        channels += d.c;
    }
    let dims = Dims::new(first.n, channels, first.h, first.w);
    let mut out = Vec::with_capacity(dims.len());
    for n in 0..first.n {
        for p in parts {
            let per = p.dims().c * first.plane();
            out.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor4::from_vec(dims, out)
}
