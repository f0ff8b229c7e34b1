//! MSE, PSNR and SSIM against direct computations and pinned reference values.

use redip_core::metrics::{mse, psnr, ssim, ssim_with_peak, MetricReport, SSIM_WINDOW};
use redip_core::{Rng, Tensor64};

/// Hash-like deterministic pattern in [0, 1).
fn pattern(c: usize, h: usize, w: usize, shift: f64) -> Tensor64 {
    let mut v = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let a = (i as f64 * 12.9898 + j as f64 * 78.233 + ch as f64 * 37.719 + shift).sin() * 43758.5453;
                v.push(a - a.floor());
            }
        }
    }
    Tensor64::from_vec(&[c, h, w], v).unwrap()
}

/// Mean SSIM with an explicit 2-D window and centred moments.
fn ssim_direct(a: &Tensor64, b: &Tensor64, peak: f64) -> f64 {
    let (c, h, w) = a.chw().unwrap();
    let k = SSIM_WINDOW;
    let g: Vec<f64> = (0..k).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            win[i * k + j] = g[i] * g[j];
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor64, i: usize, j: usize| t.data()[(ch * h + i) * w + j];
        let mut acc = 0.0;
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        ma += win[i * k + j] * at(a, y + i, x + j);
                        mb += win[i * k + j] * at(b, y + i, x + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let (da, db) = (at(a, y + i, x + j) - ma, at(b, y + i, x + j) - mb);
                        va += win[i * k + j] * da * da;
                        vb += win[i * k + j] * db * db;
                        cov += win[i * k + j] * da * db;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        total += acc / ((h - k + 1) * (w - k + 1)) as f64;
    }
    total / c as f64
}

#[test]
fn ssim_matches_the_direct_window_sum() {
    let mut rng = Rng::new(61);
    for &(c, h, w) in &[(1, 11, 11), (1, 20, 17), (3, 16, 24), (2, 13, 30)] {
        let a: Tensor64 = rng.uniform(&[c, h, w], 0.0, 1.0).unwrap();
        let b = a.add(&rng.normal(&[c, h, w], 0.1).unwrap()).unwrap();
        for peak in [1.0, 2.0] {
            let got = ssim_with_peak(&a, &b, peak).unwrap();
            assert!(
                (got - ssim_direct(&a, &b, peak)).abs() < 1e-9,
                "{c}x{h}x{w} peak {peak}"
            );
        }
    }
}

#[test]
fn ssim_pinned_reference_values() {
    // gaussian-window SSIM (σ 1.5, population moments, valid region) from an
    // independent implementation
    let a = pattern(1, 20, 17, 0.0);
    let b = Tensor64::from_vec(
        &[1, 20, 17],
        (0..20)
            .flat_map(|i| (0..17).map(move |j| (i, j)))
            .zip(a.data())
            .map(|((i, j), &v)| (0.8 * v + 0.1 * ((i + j) as f64).cos()).clamp(0.0, 1.0))
            .collect(),
    )
    .unwrap();
    assert!((ssim(&a, &b).unwrap() - 0.9030786016828724).abs() < 1e-8);

    let a = pattern(3, 16, 24, 1.0);
    let b = a.map("", |v| (0.5 * v + 0.25).clamp(0.0, 1.0)).unwrap();
    assert!((ssim(&a, &b).unwrap() - 0.7997655364421642).abs() < 1e-8);
    assert!((ssim_with_peak(&a, &b, 2.0).unwrap() - 0.8046368450261675).abs() < 1e-8);
}

#[test]
fn ssim_is_symmetric_and_bounded() {
    let mut rng = Rng::new(62);
    let a: Tensor64 = rng.uniform(&[1, 14, 14], 0.0, 1.0).unwrap();
    let b: Tensor64 = rng.uniform(&[1, 14, 14], 0.0, 1.0).unwrap();
    let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    assert_eq!(ab, ba);
    assert!(ab < 1.0 && ab > -1.0);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn psnr_of_known_offsets() {
    let a: Tensor64 = Tensor64::full(&[1, 8, 8], 0.5).unwrap();
    let b = a.map("", |v| v + 0.1).unwrap();
    assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-10);
    assert!((psnr(&a, &b, 255.0).unwrap() - (20.0 + 20.0 * 255f64.log10())).abs() < 1e-9);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
}

#[test]
fn report_bundles_all_three() {
    let a = pattern(1, 12, 12, 2.0);
    let b = a.map("", |v| v * 0.9).unwrap();
    let r = MetricReport::compute(&a, &b, 1.0).unwrap();
    assert_eq!(r.mse, mse(&a, &b).unwrap());
    assert_eq!(r.psnr, psnr(&a, &b, 1.0).unwrap());
    assert_eq!(r.ssim, ssim(&a, &b).unwrap());
}
