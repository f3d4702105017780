mod common;

use common::*;
use degrad::metrics::{mse, psnr, psnr_from_mse, ssim, MetricReport, PSNR_CAP_DB};
use degrad::ImageTensor;
use proptest::prelude::*;

/// Direct-formula SSIM: for each 11×11 window fully inside the image, weighted
/// means, variances and covariance with a 2-D Gaussian (σ = 1.5).
fn reference_ssim(x: &ImageTensor, y: &ImageTensor) -> f64 {
    let (h, w) = (x.height(), x.width());
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    for c in 0..x.channels() {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        ma += k * x.get(c, y0 + i, x0 + j);
                        mb += k * y.get(c, y0 + i, x0 + j);
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = win[i][j] / total;
                        let (p, q) = (x.get(c, y0 + i, x0 + j) - ma, y.get(c, y0 + i, x0 + j) - mb);
                        va += k * p * p;
                        vb += k * q * q;
                        cov += k * p * q;
                    }
                }
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        acc += sum / count as f64;
    }
    acc / x.channels() as f64
}

#[test]
fn mse_examples() {
    let x = uniform(1, 5, 5, &mut rng(1));
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    let shifted = x.map(|v| v + 0.1);
    assert!((mse(&shifted, &x).unwrap() - 0.01).abs() < 1e-15);
    let y = uniform(1, 5, 5, &mut rng(2));
    let mut naive = 0.0;
    for r in 0..5 {
        for c in 0..5 {
            naive += (x.get(0, r, c) - y.get(0, r, c)).powi(2);
        }
    }
    assert!((mse(&x, &y).unwrap() - naive / 25.0).abs() < 1e-12);
    assert!(mse(&x, &ImageTensor::zeros(1, 5, 6)).is_err());
}

#[test]
fn psnr_examples() {
    assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
    let x = uniform(1, 4, 4, &mut rng(3));
    assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
    let mut prev = f64::INFINITY;
    for m in [1e-6, 1e-4, 1e-3, 1e-2, 0.5] {
        let p = psnr_from_mse(m, 1.0);
        assert!(p < prev);
        prev = p;
    }
}

#[test]
fn ssim_examples() {
    let x = uniform(1, 16, 16, &mut rng(4));
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let inv = x.map(|v| 1.0 - v);
    assert!(ssim(&x, &inv).unwrap() < 1.0);
    assert!(ssim(&ImageTensor::zeros(1, 10, 16), &ImageTensor::zeros(1, 10, 16)).is_err());
}

#[test]
fn ssim_matches_direct_formula() {
    let mut r = rng(5);
    let x = uniform(1, 16, 16, &mut r);
    let mut y = x.clone();
    y.axpy(0.1, &gaussian(1, 16, 16, &mut r));
    assert!((ssim(&x, &y).unwrap() - reference_ssim(&x, &y)).abs() < 1e-9);
    let a = uniform(3, 13, 17, &mut r);
    let b = uniform(3, 13, 17, &mut r);
    assert!((ssim(&a, &b).unwrap() - reference_ssim(&a, &b)).abs() < 1e-9);
}

#[test]
fn report_bundles_all_three() {
    let x = uniform(1, 12, 12, &mut rng(6));
    let rep = MetricReport::compute(&x, &x).unwrap();
    assert_eq!((rep.mse, rep.psnr), (0.0, PSNR_CAP_DB));
    assert!((rep.ssim - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>(), noise in 0.0f64..0.5) {
        let mut r = rng(seed);
        let x = uniform(1, 14, 14, &mut r);
        let mut y = x.clone();
        y.axpy(noise, &gaussian(1, 14, 14, &mut r));
        let (s1, s2) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s1));
    }

    #[test]
    fn psnr_decreases_with_mse(a in 1e-8f64..1.0, b in 1e-8f64..1.0) {
        prop_assume!(a != b);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(psnr_from_mse(lo, 1.0) > psnr_from_mse(hi, 1.0));
    }
}
