//! Convolution kernels against direct loop implementations.

mod common;

use common::{conv_loops, transpose_loops};
use proptest::prelude::*;
use redip_core::{conv2d, conv2d_transpose, relu, Padding, Rng, Tensor64};

#[test]
fn conv2d_matches_loops() {
    let mut rng = Rng::new(11);
    for &(c, o, h, w, k, stride) in &[
        (1, 1, 5, 5, 3, 1),
        (3, 4, 7, 6, 3, 1),
        (2, 5, 8, 8, 3, 2),
        (4, 2, 9, 7, 1, 1),
        (2, 3, 6, 10, 5, 1),
        (3, 2, 8, 6, 2, 2),
    ] {
        let x: Tensor64 = rng.normal(&[c, h, w], 1.0).unwrap();
        let kern: Tensor64 = rng.normal(&[o, c, k, k], 1.0).unwrap();
        for pad in [Padding::Same, Padding::Valid] {
            let got = conv2d(&x, &kern, stride, pad).unwrap();
            let want = conv_loops(&x, &kern, stride, pad.amount(k));
            assert_eq!(got.shape(), want.shape());
            assert!(
                got.max_abs_diff(&want).unwrap() < 1e-12,
                "c{c} o{o} {h}x{w} k{k} s{stride} {pad:?}"
            );
        }
    }
}

#[test]
fn transpose_matches_scatter_and_is_adjoint() {
    let mut rng = Rng::new(12);
    for &(c, o, h, w, k, stride) in &[
        (1, 1, 3, 3, 2, 2),
        (3, 2, 4, 5, 2, 2),
        (2, 4, 3, 3, 3, 1),
        (2, 2, 5, 4, 3, 2),
    ] {
        let y: Tensor64 = rng.normal(&[o, h, w], 1.0).unwrap();
        let kern: Tensor64 = rng.normal(&[o, c, k, k], 1.0).unwrap();
        let got = conv2d_transpose(&y, &kern, stride).unwrap();
        assert!(got.max_abs_diff(&transpose_loops(&y, &kern, stride)).unwrap() < 1e-12);

        // <conv(x), y> = <x, conv^T(y)>
        let x: Tensor64 = rng.normal(got.shape(), 1.0).unwrap();
        let fwd = conv2d(&x, &kern, stride, Padding::Valid).unwrap();
        assert_eq!(fwd.shape(), y.shape());
        let lhs = fwd.inner(&y).unwrap();
        let rhs = x.inner(&got).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn zero_input_maps_to_zero() {
    let kern: Tensor64 = Rng::new(1).normal(&[3, 2, 3, 3], 1.0).unwrap();
    let out = conv2d(&Tensor64::zeros(&[2, 6, 6]).unwrap(), &kern, 1, Padding::Same).unwrap();
    assert_eq!(out.norm_inf(), 0.0);
    let up = conv2d_transpose(&Tensor64::zeros(&[3, 3, 3]).unwrap(), &kern, 2).unwrap();
    assert_eq!(up.norm_inf(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let x1: Tensor64 = rng.normal(&[2, 6, 5], 1.0).unwrap();
        let x2: Tensor64 = rng.normal(&[2, 6, 5], 1.0).unwrap();
        let k: Tensor64 = rng.normal(&[3, 2, 3, 3], 1.0).unwrap();
        let lhs = conv2d(&x1.lincomb(a, &x2, b).unwrap(), &k, 1, Padding::Same).unwrap();
        let rhs = conv2d(&x1, &k, 1, Padding::Same).unwrap()
            .lincomb(a, &conv2d(&x2, &k, 1, Padding::Same).unwrap(), b).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn relu_is_positively_homogeneous(seed in any::<u64>(), alpha in 0.0f64..10.0) {
        let x: Tensor64 = Rng::new(seed).normal(&[1, 4, 4], 1.0).unwrap();
        let lhs = relu(&x.scale(alpha).unwrap());
        let rhs = relu(&x).scale(alpha).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12 * alpha.max(1.0));
    }
}
