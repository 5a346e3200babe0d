//! Lossless weight rewrites from multi-path training structures to single
//! convolutions.
//!
//! Every pass is linear algebra on weights: BN folding, serial 1x1
//! composition, kernel embedding, and parallel-branch summation. None of the
//! passes crosses a non-linearity.

use crate::blocks::{ConvBn, RbParams, Residual};
use crate::error::{Axis, Error, Result};
use crate::ops::{conv2d, BnParams, ConvSpec, ConvWeights};
use crate::tensor::{Dims, Element, Tensor4};

/// A convolution with a bias, produced by the passes in this module.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedConv<T> {
    spec: ConvSpec,
    weights: ConvWeights<T>,
}

impl<T: Element> FusedConv<T> {
    pub fn new(spec: ConvSpec, weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let weights = ConvWeights::new(weight, Some(bias));
        weights.check(&spec)?;
        Ok(FusedConv { spec, weights })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weights(&self) -> &ConvWeights<T> {
        &self.weights
    }

    pub fn weight(&self) -> &Tensor4<T> {
        &self.weights.weight
    }

    pub fn bias(&self) -> &[T] {
        self.weights.bias.as_deref().unwrap_or_default()
    }

    /// Weights plus biases.
    pub fn param_count(&self) -> usize {
        self.spec.weight_len() + self.spec.out_channels
    }

    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d(x, &self.spec, &self.weights)
    }

    /// Returns a copy with `delta` added to one bias entry. Used for fault
    /// injection in verification tooling.
    pub fn with_bias_offset(&self, channel: usize, delta: T) -> Self {
        let mut out = self.clone();
        if let Some(b) = out.weights.bias.as_mut() {
            b[channel] = b[channel] + delta;
        }
        out
    }
}

/// Folds frozen BN statistics into the preceding convolution:
/// `W' = (gamma / s) W`, `B' = (B - mean) gamma / s + beta`, `s = sqrt(var + eps)`.
pub fn fuse_conv_bn<T: Element>(
    spec: &ConvSpec,
    w: &ConvWeights<T>,
    bn: &BnParams<T>,
) -> Result<FusedConv<T>> {
    w.check(spec)?;
    bn.validate()?;
    if bn.channels() != spec.out_channels {
        return Err(Error::dim("fuse_conv_bn", Axis::Channel, spec.out_channels, bn.channels()));
    }
    let std = bn.std();
    let per_out = spec.weight_len() / spec.out_channels;
    let scale: Vec<T> = bn.gamma.iter().zip(&std).map(|(&g, &s)| g / s).collect();
    let weight: Vec<T> = w
        .weight
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| scale[i / per_out] * v)
        .collect();
    let bias = (0..spec.out_channels)
        .map(|c| {
            let b = w.bias.as_ref().map_or(T::zero(), |b| b[c]);
            (b - bn.mean[c]) * bn.gamma[c] / std[c] + bn.beta[c]
        })
        .collect();
    FusedConv::new(*spec, Tensor4::from_vec(spec.weight_dims(), weight)?, bias)
}

fn require_pointwise<T: Element>(c: &FusedConv<T>, which: &str) -> Result<()> {
    let s = c.spec();
    if s.kernel != 1 || s.groups != 1 || s.padding != 0 {
        return Err(Error::Contract(format!(
            "{which} must be an ungrouped unpadded 1x1 convolution, got {s:?}"
        )));
    }
    Ok(())
}

/// Composes two stacked 1x1 convolutions into one: `W = W2 W1`,
/// `B = W2 B1 + B2`. The first conv may carry a stride; the second may not.
pub fn merge_serial_1x1<T: Element>(first: &FusedConv<T>, second: &FusedConv<T>) -> Result<FusedConv<T>> {
    require_pointwise(first, "first conv")?;
    require_pointwise(second, "second conv")?;
    if second.spec().stride != 1 {
        return Err(Error::Contract(format!(
            "serial 1x1 merge requires the second conv to have stride 1, got {}",
            second.spec().stride
        )));
    }
    let (cin, mid, cout) = (first.spec().in_channels, first.spec().out_channels, second.spec().out_channels);
    if second.spec().in_channels != mid {
        return Err(Error::dim("merge_serial_1x1", Axis::Channel, mid, second.spec().in_channels));
    }
    let (w1, w2) = (first.weight().data(), second.weight().data());
    let mut weight = vec![T::zero(); cout * cin];
    for o in 0..cout {
        for i in 0..cin {
            let mut acc = T::zero();
            for m in 0..mid {
                acc = acc + w2[o * mid + m] * w1[m * cin + i];
            }
            weight[o * cin + i] = acc;
        }
    }
    let bias = (0..cout)
        .map(|o| {
            let mut acc = T::zero();
            for m in 0..mid {
                acc = acc + w2[o * mid + m] * first.bias()[m];
            }
            acc + second.bias()[o]
        })
        .collect();
    let spec = ConvSpec {
        out_channels: cout,
        ..*first.spec()
    };
    FusedConv::new(spec, Tensor4::from_vec(Dims::new(cout, cin, 1, 1), weight)?, bias)
}

/// Places a 1x1 kernel at the centre tap of a zero 3x3 kernel and promotes
/// padding 0 -> 1. Forward-equivalent at stride 1, and at stride 2 on even
/// input sizes.
pub fn embed_1x1_into_3x3<T: Element>(c: &FusedConv<T>) -> Result<FusedConv<T>> {
    let s = *c.spec();
    if s.kernel != 1 || s.padding != 0 {
        return Err(Error::Contract(format!("expected an unpadded 1x1 kernel, got {s:?}")));
    }
    let spec = ConvSpec { kernel: 3, padding: 1, ..s };
    let src = c.weight();
    let weight = Tensor4::from_fn(spec.weight_dims(), |o, i, h, w| {
        if h == 1 && w == 1 {
            src.at(o, i, 0, 0)
        } else {
            T::zero()
        }
    });
    FusedConv::new(spec, weight, c.bias().to_vec())
}

/// 1x1 convolution reproducing a residual connection on the first
/// `channels_in` output channels.
pub fn identity_to_conv<T: Element>(channels_in: usize, channels_out: usize) -> Result<FusedConv<T>> {
    if channels_in > channels_out {
        return Err(Error::Contract(format!(
            "identity kernel needs channels_in <= channels_out, got {channels_in} > {channels_out}"
        )));
    }
    let spec = ConvSpec::new(channels_in, channels_out, 1, 1);
    let weight = Tensor4::from_fn(spec.weight_dims(), |o, i, _, _| if o == i { T::one() } else { T::zero() });
    FusedConv::new(spec, weight, vec![T::zero(); channels_out])
}

/// Adds weights and biases of parallel branches sharing one spec, in
/// sequence order.
pub fn sum_parallel<T: Element>(branches: &[FusedConv<T>]) -> Result<FusedConv<T>> {
    let (first, rest) = branches
        .split_first()
        .ok_or_else(|| Error::Contract("sum_parallel needs at least one branch".into()))?;
    let mut weight = first.weight().data().to_vec();
    let mut bias = first.bias().to_vec();
    for b in rest {
        if b.spec() != first.spec() {
            return Err(Error::Contract(format!(
                "parallel branches disagree: {:?} vs {:?}",
                first.spec(),
                b.spec()
            )));
        }
        weight.iter_mut().zip(b.weight().data()).for_each(|(a, &v)| *a = *a + v);
        bias.iter_mut().zip(b.bias()).for_each(|(a, &v)| *a = *a + v);
    }
    FusedConv::new(*first.spec(), Tensor4::from_vec(first.spec().weight_dims(), weight)?, bias)
}

/// Collapses a reparameterizable block into a single 3x3 convolution. The
/// ReLU after the branch sum stays outside the fused kernel.
pub fn reparameterize_rb<T: Element>(p: &RbParams<T>) -> Result<FusedConv<T>> {
    p.validate()?;
    let mut branches = vec![p.conv3.fuse()?];
    if let Some((head, tail)) = p.pointwise.split_first() {
        let mut merged = head.fuse()?;
        for c in tail {
            merged = merge_serial_1x1(&merged, &c.fuse()?)?;
        }
        branches.push(embed_1x1_into_3x3(&merged)?);
    }
    let (cin, cout) = (p.conv3.spec.in_channels, p.conv3.spec.out_channels);
    match &p.residual {
        Residual::None => {}
        Residual::Identity => branches.push(embed_1x1_into_3x3(&identity_to_conv(cin, cout)?)?),
        Residual::IdentityBn(bn) => {
            let id = identity_to_conv::<T>(cin, cout)?;
            let folded = fuse_conv_bn(id.spec(), id.weights(), bn)?;
            branches.push(embed_1x1_into_3x3(&folded)?);
        }
    }
    sum_parallel(&branches)
}

/// Folds each grouped conv with its BN and adds the results.
pub fn reparameterize_rppm_pair<T: Element>(a: &ConvBn<T>, b: &ConvBn<T>) -> Result<FusedConv<T>> {
    if a.spec != b.spec {
        return Err(Error::Contract(format!(
            "grouped pair disagrees: {:?} vs {:?}",
            a.spec, b.spec
        )));
    }
    sum_parallel(&[a.fuse()?, b.fuse()?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::batchnorm;

    fn scalar_conv(w: f64, b: f64) -> FusedConv<f64> {
        FusedConv::new(
            ConvSpec::new(1, 1, 1, 1),
            Tensor4::full(Dims::new(1, 1, 1, 1), w),
            vec![b],
        )
        .unwrap()
    }

    #[test]
    fn fold_with_identity_stats_is_noop() {
        let spec = ConvSpec::new(2, 3, 3, 1);
        let weight = Tensor4::from_fn(spec.weight_dims(), |o, i, h, w| (o * 7 + i * 3 + h + w) as f64 * 0.1);
        let w = ConvWeights::new(weight.clone(), None);
        let fused = fuse_conv_bn(&spec, &w, &BnParams::identity(3, 0.0)).unwrap();
        assert_eq!(fused.weight(), &weight);
        assert_eq!(fused.bias(), &[0.0; 3]);
    }

    #[test]
    fn fold_substitution_example() {
        let spec = ConvSpec::new(1, 1, 1, 1);
        let w = ConvWeights::new(Tensor4::full(Dims::new(1, 1, 1, 1), 0.75), Some(vec![0.0]));
        let bn = BnParams { gamma: vec![2.0], beta: vec![0.5], mean: vec![1.0], var: vec![1.0], eps: 0.0 };
        let fused = fuse_conv_bn(&spec, &w, &bn).unwrap();
        assert_eq!(fused.weight().data(), &[1.5]);
        assert_eq!(fused.bias(), &[-1.5]);
    }

    #[test]
    fn fold_rejects_bad_stats() {
        let spec = ConvSpec::new(1, 2, 1, 1);
        let w = ConvWeights::new(Tensor4::<f64>::zeros(spec.weight_dims()), None);
        assert!(matches!(
            fuse_conv_bn(&spec, &w, &BnParams::identity(3, 1e-5)),
            Err(Error::Dimension { .. })
        ));
        let mut bn = BnParams::identity(2, 1e-5);
        bn.var[0] = -1.0;
        assert!(matches!(fuse_conv_bn(&spec, &w, &bn), Err(Error::NegativeVariance { channel: 0 })));
    }

    #[test]
    fn fold_matches_composed_forward() {
        let spec = ConvSpec::new(2, 2, 3, 1);
        let w = ConvWeights::new(
            Tensor4::from_fn(spec.weight_dims(), |o, i, h, w| ((o + 2 * i + h * w) as f64).sin()),
            None,
        );
        let bn = BnParams { gamma: vec![1.3, -0.4], beta: vec![0.2, 0.1], mean: vec![0.3, -0.7], var: vec![0.9, 2.0], eps: 1e-5 };
        let x = Tensor4::from_fn(Dims::new(1, 2, 5, 4), |_, c, h, w| ((c * 20 + h * 4 + w) as f64).cos());
        let reference = batchnorm(&conv2d(&x, &spec, &w).unwrap(), &bn).unwrap();
        let fused = fuse_conv_bn(&spec, &w, &bn).unwrap().forward(&x).unwrap();
        assert!(reference.max_abs_diff(&fused).unwrap() <= 1e-12);
    }

    #[test]
    fn serial_merge_scalar_example() {
        let merged = merge_serial_1x1(&scalar_conv(2.0, 1.0), &scalar_conv(3.0, 0.5)).unwrap();
        assert_eq!(merged.weight().data(), &[6.0]);
        assert_eq!(merged.bias(), &[3.5]);
    }

    #[test]
    fn serial_merge_with_identity_second_is_noop() {
        let spec = ConvSpec::new(3, 4, 1, 2);
        let first = FusedConv::new(
            spec,
            Tensor4::from_fn(spec.weight_dims(), |o, i, _, _| (o as f64 - i as f64) * 0.37),
            vec![0.1, -0.2, 0.3, 0.4],
        )
        .unwrap();
        let merged = merge_serial_1x1(&first, &identity_to_conv(4, 4).unwrap()).unwrap();
        assert_eq!(merged, first);
    }

    #[test]
    fn serial_merge_rejects_strided_second_and_mismatch() {
        let strided = FusedConv::new(ConvSpec::new(1, 1, 1, 2), Tensor4::full(Dims::new(1, 1, 1, 1), 1.0), vec![0.0]).unwrap();
        assert!(matches!(merge_serial_1x1(&scalar_conv(1.0, 0.0), &strided), Err(Error::Contract(_))));
        let wide = identity_to_conv::<f64>(2, 2).unwrap();
        assert!(matches!(merge_serial_1x1(&scalar_conv(1.0, 0.0), &wide), Err(Error::Dimension { .. })));
    }

    #[test]
    fn embed_places_center_tap() {
        let c = scalar_conv(4.0, 1.0);
        let e = embed_1x1_into_3x3(&c).unwrap();
        assert_eq!(e.spec().padding, 1);
        assert_eq!(e.weight().data(), &[0., 0., 0., 0., 4., 0., 0., 0., 0.]);
        assert_eq!(e.bias(), &[1.0]);
    }

    #[test]
    fn identity_conv_reproduces_input() {
        let x = Tensor4::from_fn(Dims::new(2, 3, 4, 5), |n, c, h, w| (n * 60 + c * 20 + h * 5 + w) as f64 - 50.0);
        let id = identity_to_conv::<f64>(3, 3).unwrap();
        assert_eq!(id.forward(&x).unwrap(), x);
        assert_eq!(embed_1x1_into_3x3(&id).unwrap().forward(&x).unwrap(), x);
        let wider = identity_to_conv::<f64>(3, 5).unwrap().forward(&x).unwrap();
        assert_eq!(wider.dims().c, 5);
        assert_eq!(wider.plane(1, 2), x.plane(1, 2));
        assert!(wider.plane(0, 4).iter().all(|&v| v == 0.0));
        assert!(identity_to_conv::<f64>(4, 3).is_err());
    }

    #[test]
    fn sum_with_zero_branch_and_single_branch() {
        let a = embed_1x1_into_3x3(&scalar_conv(2.0, 0.5)).unwrap();
        let zero = FusedConv::new(*a.spec(), Tensor4::zeros(a.spec().weight_dims()), vec![0.0]).unwrap();
        assert_eq!(sum_parallel(&[a.clone(), zero]).unwrap(), a);
        assert_eq!(sum_parallel(std::slice::from_ref(&a)).unwrap(), a);
        assert!(sum_parallel::<f64>(&[]).is_err());
        assert!(matches!(sum_parallel(&[a, scalar_conv(1.0, 0.0)]), Err(Error::Contract(_))));
    }
}
