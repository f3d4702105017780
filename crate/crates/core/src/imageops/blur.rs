use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::Kernel;
use super::spectrum::kernel_spectrum;
use super::tensor::ImageTensor;
use crate::error::{Error, Result};

/// Circular 2-D convolution with a fixed kernel, applied per channel.
///
/// Immutable after construction; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurOperator {
    kernel: Kernel,
    flipped: Kernel,
}

impl BlurOperator {
    pub fn new(kernel: Kernel) -> Self {
        let flipped = kernel.flipped();
        Self { kernel, flipped }
    }

    pub fn identity() -> Self {
        Self::new(Kernel::identity())
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        let k = self.kernel.size();
        if x.height() < k || x.width() < k {
            return Err(Error::invalid(format!(
                "image {}x{} is smaller than the {k}x{k} kernel",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// `A x`: convolution with the kernel, circular boundary.
    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        Ok(self.convolve(x, false))
    }

    /// `Aᵀ y`: correlation with the kernel, i.e. convolution with the flipped kernel.
    pub fn adjoint(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(y)?;
        Ok(self.convolve(y, true))
    }

    /// `Aᵀ A u`, the Gauss-Newton operator of the data term.
    pub fn normal(&self, u: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(u)?;
        Ok(self.convolve(&self.convolve(u, false), true))
    }

    /// The adjoint is convolution with the flipped kernel, so for symmetric
    /// kernels both directions perform the identical floating-point sums.
    fn convolve(&self, x: &ImageTensor, adjoint: bool) -> ImageTensor {
        let kernel = if adjoint { &self.flipped } else { &self.kernel };
        let (h, w) = (x.height(), x.width());
        let r = kernel.radius() as isize;
        let mut out = x.zeros_like();
        for c in 0..x.channels() {
            let src = x.channel(c);
            let dst = out.channel_mut(c);
            for ky in 0..kernel.size() {
                for kx in 0..kernel.size() {
                    let weight = kernel.weight(ky, kx);
                    if weight == 0.0 {
                        continue;
                    }
                    // out[y] += K[ky] · x[y − (ky − r)]
                    accumulate_wrapped(dst, src, h, w, r - ky as isize, r - kx as isize, weight);
                }
            }
        }
        out
    }

    /// Power-iteration estimate of `‖A‖₂` on a `height × width` single-channel grid.
    ///
    /// The start vector is fixed, so the estimate is nondecreasing in `iters`.
    pub fn spectral_norm_estimate(&self, height: usize, width: usize, iters: usize) -> Result<f64> {
        if iters == 0 {
            return Err(Error::invalid("power iteration needs at least one iteration"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b10b);
        let mut u = ImageTensor::from_fn(1, height, width, |_, _, _| StandardNormal.sample(&mut rng));
        self.check_input(&u)?;
        u.scale(1.0 / u.norm());
        let mut estimate = 0.0;
        for _ in 0..iters {
            let au = self.convolve(&u, false);
            estimate = au.norm();
            let mut next = self.convolve(&au, true);
            let n = next.norm();
            if n == 0.0 {
                return Ok(0.0);
            }
            next.scale(1.0 / n);
            u = next;
        }
        // Rayleigh-style estimate at the final normalized vector.
        Ok(self.convolve(&u, false).norm().max(estimate))
    }

    /// `max |K̂(f)|` over the DFT grid: the exact spectral norm of the circulant operator.
    pub fn spectral_norm_exact(&self, height: usize, width: usize) -> f64 {
        kernel_spectrum(&self.kernel, height, width)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

/// `dst[y, x] += weight * src[(y + sy) mod h, (x + sx) mod w]`
fn accumulate_wrapped(dst: &mut [f64], src: &[f64], h: usize, w: usize, sy: isize, sx: isize, weight: f64) {
    let s = sx.rem_euclid(w as isize) as usize;
    for y in 0..h {
        let ry = (y as isize + sy).rem_euclid(h as isize) as usize;
        let src_row = &src[ry * w..(ry + 1) * w];
        let dst_row = &mut dst[y * w..(y + 1) * w];
        let (head, tail) = dst_row.split_at_mut(w - s);
        for (d, v) in head.iter_mut().zip(&src_row[s..]) {
            *d += weight * v;
        }
        for (d, v) in tail.iter_mut().zip(&src_row[..s]) {
            *d += weight * v;
        }
    }
}

/// `∇ₓ ‖A x − d‖² = 2 Aᵀ (A x − d)`.
pub fn data_fidelity_grad(a: &BlurOperator, x: &ImageTensor, d: &ImageTensor) -> Result<ImageTensor> {
    x.check_same_shape(d, "data_fidelity_grad")?;
    let mut residual = a.apply(x)?;
    residual.axpy(-1.0, d);
    let mut g = a.adjoint(&residual)?;
    g.scale(2.0);
    Ok(g)
}
