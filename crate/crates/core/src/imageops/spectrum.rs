//! 2-D discrete Fourier transforms of single image planes.
//!
//! Circular convolution with a kernel is diagonal in this basis, which is what
//! the direct inverse and the ridge-regression closed form rely on.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::kernel::Kernel;

/// Planned forward and inverse transforms for one `height × width` grid.
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    /// Inverse transform (normalized), keeping only the real part.
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.height * self.width) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        assert_eq!(buf.len(), self.height * self.width);
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        for r in buf.chunks_exact_mut(self.width) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); self.height];
        for x in 0..self.width {
            for y in 0..self.height {
                column[y] = buf[y * self.width + x];
            }
            col.process(&mut column);
            for y in 0..self.height {
                buf[y * self.width + x] = column[y];
            }
        }
    }
}

/// Transfer function of circular convolution with `kernel` on a `height × width` grid.
///
/// The kernel is placed with its central tap at the origin and wrapped around.
pub fn kernel_spectrum(kernel: &Kernel, height: usize, width: usize) -> Vec<Complex64> {
    let fft = Fft2::new(height, width);
    fft.forward_real(&wrapped_kernel(kernel, height, width))
}

pub(crate) fn wrapped_kernel(kernel: &Kernel, height: usize, width: usize) -> Vec<f64> {
    let r = kernel.radius() as isize;
    let mut plane = vec![0.0; height * width];
    for ky in 0..kernel.size() {
        for kx in 0..kernel.size() {
            let y = (ky as isize - r).rem_euclid(height as isize) as usize;
            let x = (kx as isize - r).rem_euclid(width as isize) as usize;
            plane[y * width + x] += kernel.weight(ky, kx);
        }
    }
    plane
}
