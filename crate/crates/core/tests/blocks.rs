//! Each block's training structure against its deployment structure.

mod common;

use common::*;
use rdrnet_core::blocks::*;
use rdrnet_core::params::RandomParams;
use rdrnet_core::{Dims, Tensor4};

const TOL: f64 = 1e-10;

fn src(seed: u64) -> RandomParams {
    RandomParams::new(seed, 1e-5)
}

fn input(c: usize, h: usize, w: usize, seed: u64) -> Tensor4<f64> {
    rand_tensor(&mut rng(seed), Dims::new(2, c, h, w), 1.0)
}

#[test]
fn rb_variants() {
    for (i, (cin, cout, stride, num_1x1, residual, residual_bn)) in [
        (8, 8, 1, 2, true, false),
        (8, 8, 1, 0, true, false),
        (8, 8, 1, 3, false, false),
        (8, 8, 1, 1, true, true),
        (4, 8, 2, 2, true, false),
        (8, 12, 1, 2, true, false),
    ]
    .into_iter()
    .enumerate()
    {
        let cfg = RbConfig { in_channels: cin, out_channels: cout, stride, num_1x1, residual, residual_bn };
        let rb = Rb::<f64>::load(&mut src(i as u64), Structure::Train, "b", cfg, i % 2 == 0).unwrap();
        let fused = rb.reparameterize().unwrap();
        assert!(matches!(fused.form, RbForm::Deploy(_)));
        assert_eq!(fused.bn_count(), 0);
        assert_eq!(fused.param_count(), cin * cout * 9 + cout);
        let x = input(cin, 12, 10, i as u64);
        let (a, b) = (rb.forward(&x).unwrap(), fused.forward(&x).unwrap());
        assert_eq!(a.dims(), Dims::new(2, cout, 12 / stride, 10 / stride));
        assert!(max_diff(&a, &b) <= TOL, "case {i}: {}", max_diff(&a, &b));
        let (cost, hw) = fused.cost(12, 10).unwrap();
        assert_eq!(hw, (12 / stride, 10 / stride));
        assert_eq!(cost.macs, (9 * cin * cout * hw.0 * hw.1) as u64);
    }
}

#[test]
fn bottleneck_folds() {
    for (cin, cout, stride) in [(8, 16, 2), (16, 16, 1), (8, 16, 1)] {
        let bb = BbParams::<f64>::load(&mut src(5), Structure::Train, "bb", cin, cout, stride).unwrap();
        let folded = bb.fold().unwrap();
        assert_eq!(folded.bn_count(), 0);
        let x = input(cin, 8, 8, 6);
        let (a, b) = (bb.forward(&x).unwrap(), folded.forward(&x).unwrap());
        assert_eq!(a.dims(), Dims::new(2, cout, 8 / stride, 8 / stride));
        assert!(max_diff(&a, &b) <= TOL);
    }
}

#[test]
fn fusion_folds_and_checks_geometry() {
    for factor in [2, 4] {
        let f = FusionParams::<f64>::load(&mut src(7), Structure::Train, "f", 16, 8, factor).unwrap();
        assert_eq!(f.d2s.len(), factor.trailing_zeros() as usize);
        let folded = f.fold().unwrap();
        let xs = input(16, 4, 6, 8);
        let xd = input(8, 4 * factor, 6 * factor, 9);
        let (s1, d1) = bilateral_fuse(&xs, &xd, &f).unwrap();
        let (s2, d2) = bilateral_fuse(&xs, &xd, &folded).unwrap();
        assert_eq!((s1.dims(), d1.dims()), (xs.dims(), xd.dims()));
        assert!(max_diff(&s1, &s2) <= TOL && max_diff(&d1, &d2) <= TOL);
        assert!(s1.data().iter().chain(d1.data()).all(|&v| v >= 0.0));
        assert!(bilateral_fuse(&xs, &input(8, 4 * factor + 1, 6 * factor, 9), &f).is_err());
    }
}

#[test]
fn rppm_merges_the_grouped_pair() {
    let p = RppmParams::<f64>::load(&mut src(10), Structure::Train, "rppm", 32, 8, 16).unwrap();
    assert!(matches!(p.grouped, GroupedStage::Pair(..)));
    let merged = p.reparameterize().unwrap();
    assert!(matches!(merged.grouped, GroupedStage::Merged(_)));
    // five 1x1 units lose one affine vector each, the pair drops one grouped
    // kernel and its BNs become one bias, compression and shortcut as the 1x1s
    let grouped = 32 * 8 * 9;
    let expected = 5 * 8 + (2 * (grouped + 2 * 32) - (grouped + 32)) + 16 + 16;
    assert_eq!(p.param_count() - merged.param_count(), expected);
    for (h, w) in [(16, 32), (8, 8), (5, 7)] {
        let x = input(32, h, w, 11);
        let (a, b) = (p.forward(&x).unwrap(), merged.forward(&x).unwrap());
        assert_eq!(a.dims(), Dims::new(2, 16, h, w));
        assert!(max_diff(&a, &b) <= TOL);
    }
}

#[test]
fn head_folds_and_resizes() {
    let h = HeadParams::<f64>::load(&mut src(12), Structure::Train, "head", 8, 16, 5).unwrap();
    let folded = h.fold().unwrap();
    let x = input(8, 4, 8, 13);
    let (a, b) = (h.forward(&x, (32, 64)).unwrap(), folded.forward(&x, (32, 64)).unwrap());
    assert_eq!(a.dims(), Dims::new(2, 5, 32, 64));
    assert!(max_diff(&a, &b) <= TOL);
    assert_eq!(folded.param_count(), 8 * 16 * 9 + 16 + 16 * 5 + 5);
}
