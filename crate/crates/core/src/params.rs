//! Sources of block parameters: seeded random draws, zeros (for
//! accounting), or a [`WeightStore`].

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model_io::WeightStore;
use crate::ops::BnParams;
use crate::tensor::{Dims, Element, Tensor4};

pub trait ParamSource<T: Element> {
    fn conv_weight(&mut self, name: &str, dims: Dims) -> Result<Tensor4<T>>;

    fn bias(&mut self, name: &str, len: usize) -> Result<Vec<T>>;

    /// Reads `{prefix}.gamma|beta|mean|var|eps`.
    fn bn(&mut self, prefix: &str, channels: usize) -> Result<BnParams<T>>;
}

/// Seeded random parameters at unit activation scale.
///
/// Conv weights are uniform with variance `1 / fan_in`; BN statistics are
/// drawn away from the identity so that folding is exercised.
pub struct RandomParams {
    rng: ChaCha8Rng,
    eps: f64,
}

impl RandomParams {
    pub fn new(seed: u64, eps: f64) -> Self {
        RandomParams { rng: ChaCha8Rng::seed_from_u64(seed), eps }
    }
}

impl<T: Element> ParamSource<T> for RandomParams {
    fn conv_weight(&mut self, _name: &str, dims: Dims) -> Result<Tensor4<T>> {
        let fan_in = (dims.c * dims.h * dims.w).max(1) as f64;
        let bound = (3.0 / fan_in).sqrt();
        let data = (0..dims.len()).map(|_| T::from_f64(self.rng.gen_range(-bound..bound))).collect();
        Tensor4::from_vec(dims, data)
    }

    fn bias(&mut self, _name: &str, len: usize) -> Result<Vec<T>> {
        Ok((0..len).map(|_| T::from_f64(self.rng.gen_range(-0.1..0.1))).collect())
    }

    fn bn(&mut self, _prefix: &str, channels: usize) -> Result<BnParams<T>> {
        let mut draw = |lo: f64, hi: f64| -> Vec<T> {
            (0..channels).map(|_| T::from_f64(self.rng.gen_range(lo..hi))).collect()
        };
        Ok(BnParams {
            gamma: draw(0.4, 0.9),
            beta: draw(-0.1, 0.1),
            mean: draw(-0.1, 0.1),
            var: draw(0.5, 1.5),
            eps: T::from_f64(self.eps),
        })
    }
}

/// All-zero weights with identity BN statistics; used when only the
/// structure matters.
pub struct ZeroParams {
    pub eps: f64,
}

impl<T: Element> ParamSource<T> for ZeroParams {
    fn conv_weight(&mut self, _name: &str, dims: Dims) -> Result<Tensor4<T>> {
        Ok(Tensor4::zeros(dims))
    }

    fn bias(&mut self, _name: &str, len: usize) -> Result<Vec<T>> {
        Ok(vec![T::zero(); len])
    }

    fn bn(&mut self, _prefix: &str, channels: usize) -> Result<BnParams<T>> {
        Ok(BnParams::identity(channels, T::from_f64(self.eps)))
    }
}

/// Reads parameters by canonical name, checking every shape.
pub struct StoreParams<'a> {
    store: &'a WeightStore,
    used: HashSet<String>,
}

impl<'a> StoreParams<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        StoreParams { store, used: HashSet::new() }
    }

    /// Stored names not read so far.
    pub fn unused(&self) -> impl Iterator<Item = &str> {
        self.store.names().filter(|n| !self.used.contains(*n))
    }

    fn fetch<T: Element>(&mut self, name: &str) -> Result<(Vec<usize>, Vec<T>)> {
        let out = self.store.values::<T>(name)?;
        self.used.insert(name.to_string());
        Ok(out)
    }

    fn vector<T: Element>(&mut self, name: &str, len: usize) -> Result<Vec<T>> {
        let (dims, v) = self.fetch::<T>(name)?;
        if dims != [len] {
            return Err(Error::BadTensor { name: name.into(), reason: format!("expected dims [{len}], got {dims:?}") });
        }
        Ok(v)
    }
}

impl<T: Element> ParamSource<T> for StoreParams<'_> {
    fn conv_weight(&mut self, name: &str, dims: Dims) -> Result<Tensor4<T>> {
        let (got, v) = self.fetch::<T>(name)?;
        let want = [dims.n, dims.c, dims.h, dims.w];
        if got != want {
            return Err(Error::BadTensor { name: name.into(), reason: format!("expected dims {want:?}, got {got:?}") });
        }
        Tensor4::from_vec(dims, v)
    }

    fn bias(&mut self, name: &str, len: usize) -> Result<Vec<T>> {
        self.vector(name, len)
    }

    fn bn(&mut self, prefix: &str, channels: usize) -> Result<BnParams<T>> {
        let eps = self.vector::<T>(&format!("{prefix}.eps"), 1)?[0];
        let bn = BnParams {
            gamma: self.vector(&format!("{prefix}.gamma"), channels)?,
            beta: self.vector(&format!("{prefix}.beta"), channels)?,
            mean: self.vector(&format!("{prefix}.mean"), channels)?,
            var: self.vector(&format!("{prefix}.var"), channels)?,
            eps,
        };
        bn.validate()?;
        Ok(bn)
    }
}

pub(crate) fn export_bn<T: Element>(store: &mut WeightStore, prefix: &str, bn: &BnParams<T>) -> Result<()> {
    let c = bn.channels();
    store.insert_values(format!("{prefix}.gamma"), &[c], &bn.gamma)?;
    store.insert_values(format!("{prefix}.beta"), &[c], &bn.beta)?;
    store.insert_values(format!("{prefix}.mean"), &[c], &bn.mean)?;
    store.insert_values(format!("{prefix}.var"), &[c], &bn.var)?;
    store.insert_values(format!("{prefix}.eps"), &[1], &[bn.eps])
}

pub(crate) fn export_tensor<T: Element>(store: &mut WeightStore, name: String, t: &Tensor4<T>) -> Result<()> {
    let d = t.dims();
    store.insert_values(name, &[d.n, d.c, d.h, d.w], t.data())
}
