#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use degrad::network::{LearnedTerm, Linearization, NetConfig, Network, Normalization, ParamLayout, ParamVector};
use degrad::{ImageTensor, Kernel, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.sample(StandardNormal))
}

pub fn uniform(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, |_, _, _| rng.gen::<f64>())
}

pub fn random_kernel(size: usize, rng: &mut impl Rng) -> Kernel {
    Kernel::from_weights(size, (0..size * size).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

pub fn tiny_config(layers: usize, hidden: usize, contraction: f64, normalization: Normalization) -> NetConfig {
    NetConfig {
        n_layers: layers,
        channels: 1,
        hidden_channels: hidden,
        kernel_size: 3,
        contraction_scale: contraction,
        normalization,
        spectral_grid: 8,
        init_power_iters: 20,
    }
}

/// A small random network with nonzero biases so some ReLUs are off.
pub fn tiny_net(seed: u64, layers: usize, hidden: usize, contraction: f64, normalization: Normalization) -> (Network, ParamVector) {
    let (net, mut theta) = Network::initialize(tiny_config(layers, hidden, contraction, normalization), seed).unwrap();
    let mut r = rng(seed ^ 0xb1a5);
    for e in theta.layout().clone().entries() {
        if matches!(e.kind, degrad::network::ParamKind::Bias | degrad::network::ParamKind::Shift) {
            for b in theta.entry_mut(e) {
                *b = r.gen_range(-0.2..0.2);
            }
        }
    }
    (net, theta)
}

/// Row-major dense matrix of circular convolution, written from the
/// definition `(A x)[y, x] = Σ K[i, j] x[y − (i − r), x − (j − r)]`.
pub fn dense_blur(kernel: &Kernel, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let r = kernel.radius() as isize;
    let mut a = DMatrix::zeros(n, n);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for i in 0..kernel.size() as isize {
                for j in 0..kernel.size() as isize {
                    let sy = (y - (i - r)).rem_euclid(h as isize);
                    let sx = (x - (j - r)).rem_euclid(w as isize);
                    a[((y * w as isize + x) as usize, (sy * w as isize + sx) as usize)] += kernel.weight(i as usize, j as usize);
                }
            }
        }
    }
    a
}

/// Columns `f(eᵢ)` of a linear map on single-channel `h × w` images.
pub fn dense_from_map(h: usize, w: usize, mut f: impl FnMut(&ImageTensor) -> ImageTensor) -> DMatrix<f64> {
    let n = h * w;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = ImageTensor::zeros(1, h, w);
        e.as_mut_slice()[j] = 1.0;
        let col = f(&e);
        for i in 0..n {
            m[(i, j)] = col.as_slice()[i];
        }
    }
    m
}

pub fn to_dvec(x: &ImageTensor) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

pub fn from_dvec(v: &DVector<f64>, like: &ImageTensor) -> ImageTensor {
    ImageTensor::new(like.channels(), like.height(), like.width(), v.as_slice().to_vec()).unwrap()
}

/// `(f(x + h u) − f(x − h u)) / 2h`
pub fn central_difference(f: impl Fn(&ImageTensor) -> ImageTensor, x: &ImageTensor, u: &ImageTensor, h: f64) -> ImageTensor {
    let mut plus = x.clone();
    plus.axpy(h, u);
    let mut minus = x.clone();
    minus.axpy(-h, u);
    let mut d = f(&plus).sub(&f(&minus));
    d.scale(0.5 / h);
    d
}

pub fn empty_params() -> ParamVector {
    ParamVector::zeros(Arc::new(ParamLayout::new()))
}

/// `S ≡ 0`, with no parameters.
pub struct ZeroTerm;

pub struct ZeroLin(ImageTensor);

impl Linearization for ZeroLin {
    fn output(&self) -> &ImageTensor {
        &self.0
    }
    fn jvp(&self, u: &ImageTensor) -> Result<ImageTensor> {
        Ok(u.zeros_like())
    }
    fn vjp(&self, v: &ImageTensor) -> Result<ImageTensor> {
        Ok(v.zeros_like())
    }
    fn vjp_params(&self, _v: &ImageTensor) -> Result<ParamVector> {
        Ok(empty_params())
    }
}

impl LearnedTerm for ZeroTerm {
    type Linearized<'a> = ZeroLin;

    fn forward(&self, _theta: &ParamVector, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(x.zeros_like())
    }

    fn linearize<'a>(&'a self, _theta: &'a ParamVector, x: &ImageTensor) -> Result<ZeroLin> {
        Ok(ZeroLin(x.zeros_like()))
    }
}

#[derive(Default)]
pub struct Calls {
    pub forward: AtomicUsize,
    pub jvp: AtomicUsize,
    pub vjp: AtomicUsize,
    pub vjp_params: AtomicUsize,
}

impl Calls {
    pub fn get(&self) -> [usize; 4] {
        [&self.forward, &self.jvp, &self.vjp, &self.vjp_params].map(|c| c.load(Ordering::SeqCst))
    }
}

/// Wraps a network and counts every derivative product it hands out.
pub struct Counting<'n> {
    pub net: &'n Network,
    pub calls: Calls,
}

pub struct CountingLin<'a> {
    inner: degrad::network::NetworkLinearization<'a>,
    calls: &'a Calls,
}

impl Linearization for CountingLin<'_> {
    fn output(&self) -> &ImageTensor {
        self.inner.output()
    }
    fn jvp(&self, u: &ImageTensor) -> Result<ImageTensor> {
        self.calls.jvp.fetch_add(1, Ordering::SeqCst);
        self.inner.jvp(u)
    }
    fn vjp(&self, v: &ImageTensor) -> Result<ImageTensor> {
        self.calls.vjp.fetch_add(1, Ordering::SeqCst);
        self.inner.vjp(v)
    }
    fn vjp_params(&self, v: &ImageTensor) -> Result<ParamVector> {
        self.calls.vjp_params.fetch_add(1, Ordering::SeqCst);
        self.inner.vjp_params(v)
    }
}

impl LearnedTerm for Counting<'_> {
    type Linearized<'a> = CountingLin<'a> where Self: 'a;

    fn forward(&self, theta: &ParamVector, x: &ImageTensor) -> Result<ImageTensor> {
        self.calls.forward.fetch_add(1, Ordering::SeqCst);
        self.net.forward(theta, x)
    }

    fn linearize<'a>(&'a self, theta: &'a ParamVector, x: &ImageTensor) -> Result<CountingLin<'a>> {
        Ok(CountingLin {
            inner: self.net.linearize_at(theta, x)?,
            calls: &self.calls,
        })
    }
}
