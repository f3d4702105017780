mod common;

use common::*;
use degrad::network::{read_checkpoint, write_checkpoint, NetConfig, Network, Normalization, ParamKind, ParamVector};
use degrad::ImageTensor;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scalar_net(contraction: f64) -> (Network, ParamVector) {
    let cfg = NetConfig {
        n_layers: 2,
        channels: 1,
        hidden_channels: 2,
        kernel_size: 1,
        contraction_scale: contraction,
        normalization: Normalization::None,
        spectral_grid: 4,
        init_power_iters: 20,
    };
    let (net, mut theta) = Network::initialize(cfg, 0).unwrap();
    let layout = theta.layout().clone();
    theta.entry_mut(layout.find(0, ParamKind::Weight).unwrap()).copy_from_slice(&[0.6, -0.5]);
    theta.entry_mut(layout.find(0, ParamKind::Bias).unwrap()).copy_from_slice(&[0.1, 0.2]);
    theta.entry_mut(layout.find(1, ParamKind::Weight).unwrap()).copy_from_slice(&[0.7, 0.4]);
    theta.entry_mut(layout.find(1, ParamKind::Bias).unwrap()).copy_from_slice(&[-0.05]);
    (net, theta)
}

#[test]
fn pointwise_net_matches_hand_computation() {
    let (net, theta) = scalar_net(0.9);
    let x = ImageTensor::new(1, 2, 3, vec![-1.0, -0.3, 0.0, 0.25, 0.5, 2.0]).unwrap();
    let y = net.forward(&theta, &x).unwrap();
    let relu = |v: f64| v.max(0.0);
    for (xi, yi) in x.as_slice().iter().zip(y.as_slice()) {
        let want = 0.9 * (0.7 * relu(0.6 * xi + 0.1) + 0.4 * relu(-0.5 * xi + 0.2) - 0.05);
        assert!((want - yi).abs() < 1e-15, "{want} vs {yi}");
    }
    // d/dx at a point where both units are active
    let x = ImageTensor::filled(1, 2, 2, 0.1);
    let u = ImageTensor::filled(1, 2, 2, 1.0);
    let j = net.jvp_input(&theta, &x, &u).unwrap();
    for v in j.as_slice() {
        assert!((v - 0.9 * (0.7 * 0.6 + 0.4 * -0.5)).abs() < 1e-15);
    }
}

#[test]
fn zero_parameters_give_zero_output() {
    let (net, theta) = tiny_net(1, 4, 3, 0.9, Normalization::None);
    let zero = theta.zeros_like();
    let x = gaussian(1, 6, 6, &mut rng(1));
    assert!(net.forward(&zero, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn tiny_contraction_scale_shrinks_output() {
    let (net, theta) = tiny_net(2, 3, 4, 1e-12, Normalization::None);
    let x = gaussian(1, 6, 6, &mut rng(2));
    assert!(net.forward(&theta, &x).unwrap().norm() < 1e-10);
}

#[test]
fn zero_directions_give_zero_products() {
    let (net, theta) = tiny_net(3, 3, 4, 0.9, Normalization::Affine);
    let x = gaussian(1, 6, 6, &mut rng(3));
    let z = x.zeros_like();
    assert!(net.vjp_params(&theta, &x, &z).unwrap().as_slice().iter().all(|&v| v == 0.0));
    assert!(net.vjp_input(&theta, &x, &z).unwrap().norm() == 0.0);
    assert!(net.jvp_input(&theta, &x, &z).unwrap().norm() == 0.0);
}

#[test]
fn forward_is_deterministic_and_shape_checked() {
    let (net, theta) = tiny_net(4, 3, 4, 0.9, Normalization::Affine);
    let x = gaussian(1, 7, 5, &mut rng(4));
    assert!(net.forward(&theta, &x).unwrap() == net.forward(&theta, &x).unwrap());
    assert!(net.forward(&theta, &gaussian(3, 7, 5, &mut rng(4))).is_err());
    let short = ParamVector::zeros(std::sync::Arc::new(degrad::network::ParamLayout::new()));
    assert!(net.forward(&short, &x).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let base = tiny_config(3, 4, 0.9, Normalization::None);
    for bad in [
        NetConfig { n_layers: 1, ..base.clone() },
        NetConfig { kernel_size: 2, ..base.clone() },
        NetConfig { contraction_scale: 0.0, ..base.clone() },
        NetConfig { contraction_scale: 1.5, ..base.clone() },
        NetConfig { hidden_channels: 0, ..base.clone() },
    ] {
        assert!(Network::initialize(bad, 0).is_err());
    }
}

/// Directional derivative checks with a kink guard: a point where the
/// difference quotients at `h` and `h/2` disagree is straddling a ReLU switch.
fn check_gradients(seed: u64, normalization: Normalization) -> Option<f64> {
    let (net, theta) = tiny_net(seed, 3, 3, 0.9, normalization);
    let mut r = rng(seed.wrapping_add(100));
    let x = gaussian(1, 6, 6, &mut r);
    let u = gaussian(1, 6, 6, &mut r);
    let v = gaussian(1, 6, 6, &mut r);
    let h = 1e-5;
    let f = |y: &ImageTensor| net.forward(&theta, y).unwrap();
    let fd = central_difference(f, &x, &u, h);
    let fd_half = central_difference(f, &x, &u, h / 2.0);
    if rel_vec(fd.as_slice(), fd_half.as_slice()) > 1e-7 {
        return None;
    }
    let jvp = net.jvp_input(&theta, &x, &u).unwrap();
    let vjp = net.vjp_input(&theta, &x, &v).unwrap();
    let mut worst = rel_vec(jvp.as_slice(), fd.as_slice());
    worst = worst.max(rel(vjp.dot(&u), v.dot(&fd)));

    let p = ParamVector::from_vec(theta.layout().clone(), (0..theta.len()).map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0)).collect()).unwrap();
    let at = |s: f64| {
        let mut t = theta.clone();
        t.axpy(s, &p);
        net.forward(&t, &x).unwrap().dot(&v)
    };
    let fd_p = (at(h) - at(-h)) / (2.0 * h);
    let fd_p_half = (at(h / 2.0) - at(-h / 2.0)) / h;
    if rel(fd_p, fd_p_half) > 1e-7 {
        return None;
    }
    let gp = net.vjp_params(&theta, &x, &v).unwrap();
    worst = worst.max(rel(gp.dot(&p), fd_p));
    Some(worst)
}

#[test]
fn derivatives_match_finite_differences() {
    let mut checked = 0;
    for seed in 0..40 {
        for norm in [Normalization::None, Normalization::Affine] {
            if let Some(err) = check_gradients(seed, norm) {
                assert!(err < 1e-5, "seed {seed} {norm:?}: {err:e}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 60, "only {checked} instances away from kinks");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn vjp_is_transpose_of_jvp(seed in any::<u64>(), affine in any::<bool>(), h in 4usize..9, w in 4usize..9) {
        let norm = if affine { Normalization::Affine } else { Normalization::None };
        let (net, theta) = tiny_net(seed, 3, 3, 0.9, norm);
        let mut r = rng(seed);
        let (x, u, v) = (gaussian(1, h, w, &mut r), gaussian(1, h, w, &mut r), gaussian(1, h, w, &mut r));
        let lhs = net.vjp_input(&theta, &x, &v).unwrap().dot(&u);
        let rhs = v.dot(&net.jvp_input(&theta, &x, &u).unwrap());
        prop_assert!(rel(lhs, rhs) < 1e-12);
    }
}

/// Zero-padded multi-channel correlation on a `g × g` grid as a dense matrix.
fn dense_conv(weights: &[f64], out_ch: usize, in_ch: usize, k: usize, g: usize) -> DMatrix<f64> {
    let n = g * g;
    let p = (k / 2) as isize;
    let mut m = DMatrix::zeros(out_ch * n, in_ch * n);
    for o in 0..out_ch {
        for i in 0..in_ch {
            for y in 0..g as isize {
                for x in 0..g as isize {
                    for ky in 0..k as isize {
                        for kx in 0..k as isize {
                            let (sy, sx) = (y + ky - p, x + kx - p);
                            if sy < 0 || sx < 0 || sy >= g as isize || sx >= g as isize {
                                continue;
                            }
                            let wgt = weights[((o * in_ch + i) * k + ky as usize) * k + kx as usize];
                            m[(o * n + (y * g as isize + x) as usize, i * n + (sy * g as isize + sx) as usize)] += wgt;
                        }
                    }
                }
            }
        }
    }
    m
}

#[test]
fn normalized_layers_have_unit_dense_norm() {
    let (mut net, theta) = tiny_net(5, 3, 4, 0.9, Normalization::None);
    let mut big = theta.clone();
    big.scale(10.0);
    let normed = net.normalize_spectral(&big, 100).unwrap();
    let g = net.config().spectral_grid;
    let layout = normed.layout().clone();
    for l in 0..3 {
        let e = layout.find(l, ParamKind::Weight).unwrap();
        let (o, i, k) = (e.shape[0], e.shape[1], e.shape[2]);
        let sigma = dense_conv(normed.entry(e), o, i, k, g).singular_values().max();
        assert!(sigma <= 1.0 + 1e-3, "layer {l}: {sigma}");
        assert!(sigma > 0.99, "layer {l} was shrunk too far: {sigma}");
    }
    assert!(net.lipschitz_estimate(&normed) <= 0.9 + 1e-2);
}

#[test]
fn layers_below_one_are_untouched() {
    let (mut net, theta) = tiny_net(6, 3, 4, 0.9, Normalization::None);
    let mut small = net.normalize_spectral(&theta, 50).unwrap();
    small.scale(0.5);
    let again = net.normalize_spectral(&small, 5).unwrap();
    assert!(again == small);
    for est in net.layer_norm_estimates(&again) {
        assert!(est <= 0.5 + 1e-6);
    }
}

#[test]
fn scalar_layer_normalizes_to_unit_magnitude() {
    let (mut net, mut theta) = scalar_net(0.9);
    let layout = theta.layout().clone();
    let e = layout.find(1, ParamKind::Weight).unwrap();
    theta.entry_mut(e).copy_from_slice(&[0.0, -4.0]);
    let normed = net.normalize_spectral(&theta, 30).unwrap();
    let w = normed.entry(e);
    assert_eq!(w[0], 0.0);
    assert!((w[1] + 1.0).abs() < 1e-12);
}

#[test]
fn zero_power_iterations_is_an_error() {
    let (mut net, theta) = tiny_net(7, 3, 4, 0.9, Normalization::None);
    assert!(net.normalize_spectral(&theta, 0).is_err());
}

#[test]
fn affine_statistics_follow_inputs() {
    let (mut net, theta) = tiny_net(8, 3, 4, 0.9, Normalization::Affine);
    let inputs: Vec<ImageTensor> = (0..4).map(|s| uniform(1, 8, 8, &mut rng(s))).collect();
    net.refresh_statistics(&theta, &inputs).unwrap();
    let stats: Vec<_> = net.norm_stats().collect();
    assert!(stats[0].is_none() && stats[2].is_none());
    let mid = stats[1].unwrap();
    assert!(mid.var.iter().all(|&v| v >= 0.0) && mid.mean.iter().any(|&m| m != 0.0));
    // Frozen statistics keep the map a per-sample function.
    let x = &inputs[0];
    let y1 = net.forward(&theta, x).unwrap();
    let y2 = net.forward(&theta, x).unwrap();
    assert!(y1 == y2);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (mut net, theta) = tiny_net(9, 3, 4, 0.9, Normalization::Affine);
    net.refresh_statistics(&theta, &[uniform(1, 8, 8, &mut rng(9))]).unwrap();
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, &net, &theta).unwrap();
    let (net2, theta2) = read_checkpoint(bytes.as_slice()).unwrap();
    assert!(net2 == net && theta2 == theta);
    let x = gaussian(1, 6, 6, &mut rng(10));
    assert!(net.forward(&theta, &x).unwrap() == net2.forward(&theta2, &x).unwrap());
    let mut again = Vec::new();
    write_checkpoint(&mut again, &net2, &theta2).unwrap();
    assert_eq!(bytes, again);

    bytes[0] ^= 0xff;
    assert!(read_checkpoint(bytes.as_slice()).is_err());
    assert!(read_checkpoint(&again[..again.len() - 3]).is_err());
}
