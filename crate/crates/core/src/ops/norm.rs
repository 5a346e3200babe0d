use crate::error::{Axis, Error, Result};
use crate::tensor::{Element, Tensor4};

/// Default BN epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Frozen batch-normalization statistics and affine factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub eps: T,
}

impl<T: Element> BnParams<T> {
    /// `gamma = 1, beta = 0, mean = 0, var = 1`.
    pub fn identity(channels: usize, eps: T) -> Self {
        BnParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        for len in [self.beta.len(), self.mean.len(), self.var.len()] {
            if len != c {
                return Err(Error::dim("batchnorm", Axis::Channel, c, len));
            }
        }
        if let Some(channel) = self.var.iter().position(|v| *v < T::zero()) {
            return Err(Error::NegativeVariance { channel });
        }
        if self.eps < T::zero() {
            return Err(Error::Contract("batch norm eps must be non-negative".into()));
        }
        Ok(())
    }

    /// `sqrt(var + eps)` per channel.
    pub fn std(&self) -> Vec<T> {
        self.var.iter().map(|&v| (v + self.eps).sqrt()).collect()
    }
}

/// `gamma * (x - mean) / sqrt(var + eps) + beta`, per channel.
pub fn batchnorm<T: Element>(x: &Tensor4<T>, bn: &BnParams<T>) -> Result<Tensor4<T>> {
    bn.validate()?;
    let d = x.dims();
    if d.c != bn.channels() {
        return Err(Error::dim("batchnorm", Axis::Channel, bn.channels(), d.c));
    }
    let std = bn.std();
    let mut out = Vec::with_capacity(d.len());
    for n in 0..d.n {
        for c in 0..d.c {
            let (g, b, m, s) = (bn.gamma[c], bn.beta[c], bn.mean[c], std[c]);
            out.extend(x.plane(n, c).iter().map(|&v| g * (v - m) / s + b));
        }
    }
    Tensor4::from_vec(d, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_stats_pass_through() {
        let x = Tensor4::<f64>::from_fn(Dims::new(1, 2, 2, 2), |_, c, h, w| (c + h * 2 + w) as f64 - 1.5);
        let y = batchnorm(&x, &BnParams::identity(2, 0.0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn substitution_example() {
        let x = Tensor4::<f64>::full(Dims::new(1, 1, 1, 1), 3.0);
        let bn = BnParams { gamma: vec![2.0], beta: vec![0.5], mean: vec![1.0], var: vec![1.0], eps: 0.0 };
        assert_eq!(batchnorm(&x, &bn).unwrap().data(), &[4.5]);
    }

    #[test]
    fn matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Dims::new(2, 3, 4, 5);
        let x = Tensor4::<f32>::from_fn(d, |_, _, _, _| rng.gen_range(-2.0..2.0));
        let bn = BnParams {
            gamma: (0..3).map(|_| rng.gen_range(0.5..1.5)).collect(),
            beta: (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            mean: (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            var: (0..3).map(|_| rng.gen_range(0.5..1.5)).collect(),
            eps: 1e-5,
        };
        let y = batchnorm(&x, &bn).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        let v = x.at(n, c, h, w) as f64;
                        let s = (bn.var[c] as f64 + 1e-5).sqrt();
                        let e = bn.gamma[c] as f64 * (v - bn.mean[c] as f64) / s + bn.beta[c] as f64;
                        assert!((y.at(n, c, h, w) as f64 - e).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch_and_negative_var() {
        let x = Tensor4::<f32>::zeros(Dims::new(1, 2, 1, 1));
        assert!(matches!(
            batchnorm(&x, &BnParams::identity(3, 1e-5)),
            Err(Error::Dimension { axis: Axis::Channel, .. })
        ));
        let mut bn = BnParams::identity(2, 1e-5);
        bn.var[1] = -0.1;
        assert!(matches!(batchnorm(&x, &bn), Err(Error::NegativeVariance { channel: 1 })));
    }
}
