//! Classical reconstructions: direct inverse, gradient descent with early
//! stopping, Tikhonov (ridge) and smoothed total variation.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::spectrum::{kernel_spectrum, Fft2};
use crate::imageops::{BlurOperator, ImageTensor};

/// Kernel frequencies with modulus below this make the direct inverse undefined.
pub const SINGULAR_FREQUENCY: f64 = 1e-12;
/// Relative objective decrease over `early_stop_patience` steps that counts as a plateau.
pub const PLATEAU_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Regularization weight λ ≥ 0.
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Smoothing β of the total-variation magnitude `sqrt(|∇x|² + β²)`.
    pub tv_smoothing: f64,
    /// Plateau window for early stopping; 0 disables it.
    pub early_stop_patience: usize,
}

impl BaselineConfig {
    pub fn tikhonov(lambda: f64) -> Self {
        Self {
            lambda,
            steps: 300,
            step_size: 1.0,
            tv_smoothing: 1e-3,
            early_stop_patience: 0,
        }
    }

    pub fn total_variation(lambda: f64) -> Self {
        let tv_smoothing = 1e-3;
        Self {
            lambda,
            steps: 500,
            // Just inside the stability bound 2 / (1 + 8λ/β).
            step_size: 1.9 / (1.0 + 8.0 * lambda / tv_smoothing),
            tv_smoothing,
            early_stop_patience: 20,
        }
    }

    fn validate(&self, needs_smoothing: bool) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be nonnegative"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if needs_smoothing && !(self.tv_smoothing > 0.0) {
            return Err(Error::invalid("tv_smoothing must be positive"));
        }
        Ok(())
    }
}

/// Iterate and objective history of an iterative baseline.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub x: ImageTensor,
    /// Objective at `x⁰, x¹, …`.
    pub objective: Vec<f64>,
    pub steps_taken: usize,
}

/// `x = IDFT(DFT(d) / DFT(kernel))` per channel; exact inverse of the circular blur.
pub fn direct_inverse(a: &BlurOperator, d: &ImageTensor) -> Result<ImageTensor> {
    a.apply(d)?; // shape validation
    let (h, w) = (d.height(), d.width());
    let spectrum = kernel_spectrum(a.kernel(), h, w);
    let singular: Vec<(usize, usize)> = spectrum
        .iter()
        .enumerate()
        .filter(|(_, k)| k.norm() < SINGULAR_FREQUENCY)
        .map(|(i, _)| (i / w, i % w))
        .collect();
    if !singular.is_empty() {
        return Err(Error::IllConditioned { frequencies: singular });
    }
    let fft = Fft2::new(h, w);
    let mut out = d.zeros_like();
    for c in 0..d.channels() {
        let dh = fft.forward_real(d.channel(c));
        let xh: Vec<Complex64> = dh.iter().zip(&spectrum).map(|(a, k)| a / k).collect();
        out.channel_mut(c).copy_from_slice(&fft.inverse_real(&xh));
    }
    Ok(out)
}

fn operator_norm_sq(a: &BlurOperator, d: &ImageTensor) -> f64 {
    let n = a.spectral_norm_exact(d.height(), d.width());
    n * n
}

fn least_squares_grad(a: &BlurOperator, x: &ImageTensor, d: &ImageTensor) -> Result<(ImageTensor, f64)> {
    let mut r = a.apply(x)?;
    r.axpy(-1.0, d);
    let value = 0.5 * r.dot(&r);
    Ok((a.adjoint(&r)?, value))
}

/// Gradient descent on `½‖Ax − d‖² + (λ/2)‖x‖²` from `x⁰ = d` for `cfg.steps` steps.
pub fn tikhonov_gd_traced(a: &BlurOperator, d: &ImageTensor, cfg: &BaselineConfig) -> Result<BaselineRun> {
    cfg.validate(false)?;
    let limit = 2.0 / (operator_norm_sq(a, d) + cfg.lambda);
    if cfg.step_size >= limit {
        return Err(Error::StepTooLarge {
            step: cfg.step_size,
            limit,
        });
    }
    let mut x = d.clone();
    let mut objective = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (mut g, value) = least_squares_grad(a, &x, d)?;
        objective.push(value + 0.5 * cfg.lambda * x.dot(&x));
        if cfg.lambda != 0.0 {
            g.axpy(cfg.lambda, &x);
        }
        x.axpy(-cfg.step_size, &g);
    }
    let (_, value) = least_squares_grad(a, &x, d)?;
    objective.push(value + 0.5 * cfg.lambda * x.dot(&x));
    Ok(BaselineRun {
        x,
        objective,
        steps_taken: cfg.steps,
    })
}

pub fn tikhonov_gd(a: &BlurOperator, d: &ImageTensor, cfg: &BaselineConfig) -> Result<ImageTensor> {
    Ok(tikhonov_gd_traced(a, d, cfg)?.x)
}

/// Smoothed isotropic total variation `Σ sqrt(|∇x|² + β²)` and its gradient,
/// forward differences with circular boundary, per channel.
pub fn smoothed_tv(x: &ImageTensor, beta: f64) -> (f64, ImageTensor) {
    let (h, w) = (x.height(), x.width());
    let mut grad = x.zeros_like();
    let mut value = 0.0;
    let mut ph = vec![0.0; h * w];
    let mut pv = vec![0.0; h * w];
    for c in 0..x.channels() {
        let u = x.channel(c);
        for y in 0..h {
            let yn = (y + 1) % h;
            for xx in 0..w {
                let xn = (xx + 1) % w;
                let i = y * w + xx;
                let gh = u[y * w + xn] - u[i];
                let gv = u[yn * w + xx] - u[i];
                let mag = (gh * gh + gv * gv + beta * beta).sqrt();
                value += mag;
                ph[i] = gh / mag;
                pv[i] = gv / mag;
            }
        }
        let g = grad.channel_mut(c);
        for y in 0..h {
            let yp = (y + h - 1) % h;
            for xx in 0..w {
                let xp = (xx + w - 1) % w;
                let i = y * w + xx;
                g[i] = ph[y * w + xp] - ph[i] + pv[yp * w + xx] - pv[i];
            }
        }
    }
    (value, grad)
}

/// Gradient descent on `½‖Ax − d‖² + λ Σ sqrt(|∇x|² + β²)` from `x⁰ = d`, stopping
/// after `cfg.steps` or once the objective plateaus.
pub fn tv_gd_traced(a: &BlurOperator, d: &ImageTensor, cfg: &BaselineConfig) -> Result<BaselineRun> {
    cfg.validate(true)?;
    let limit = 2.0 / (operator_norm_sq(a, d) + 8.0 * cfg.lambda / cfg.tv_smoothing);
    if cfg.step_size >= limit {
        return Err(Error::StepTooLarge {
            step: cfg.step_size,
            limit,
        });
    }
    let mut x = d.clone();
    let mut objective = Vec::with_capacity(cfg.steps + 1);
    let mut steps_taken = 0;
    for _ in 0..cfg.steps {
        let (mut g, mut value) = least_squares_grad(a, &x, d)?;
        if cfg.lambda != 0.0 {
            let (tv, tv_grad) = smoothed_tv(&x, cfg.tv_smoothing);
            value += cfg.lambda * tv;
            g.axpy(cfg.lambda, &tv_grad);
        }
        objective.push(value);
        let p = cfg.early_stop_patience;
        if p > 0 && objective.len() > p {
            let old = objective[objective.len() - 1 - p];
            if (old - value) <= PLATEAU_TOL * old.abs() {
                return Ok(BaselineRun {
                    x,
                    objective,
                    steps_taken,
                });
            }
        }
        x.axpy(-cfg.step_size, &g);
        steps_taken += 1;
    }
    let (_, mut value) = least_squares_grad(a, &x, d)?;
    if cfg.lambda != 0.0 {
        value += cfg.lambda * smoothed_tv(&x, cfg.tv_smoothing).0;
    }
    objective.push(value);
    Ok(BaselineRun {
        x,
        objective,
        steps_taken,
    })
}

pub fn tv_gd(a: &BlurOperator, d: &ImageTensor, cfg: &BaselineConfig) -> Result<ImageTensor> {
    Ok(tv_gd_traced(a, d, cfg)?.x)
}

/// Unregularized least-squares gradient descent (step `1/‖A‖²`) from `x⁰ = d`,
/// stopped after `steps` iterations.
pub fn plain_gd_early_stop(a: &BlurOperator, d: &ImageTensor, steps: usize) -> Result<ImageTensor> {
    let step = 1.0 / operator_norm_sq(a, d);
    let mut x = d.clone();
    for _ in 0..steps {
        let (g, _) = least_squares_grad(a, &x, d)?;
        x.axpy(-step, &g);
    }
    Ok(x)
}

/// MSE against `truth` of the plain gradient-descent iterates `x⁰ … x^max_steps`.
pub fn gd_error_trace(a: &BlurOperator, d: &ImageTensor, truth: &ImageTensor, max_steps: usize) -> Result<Vec<f64>> {
    truth.check_same_shape(d, "gd_error_trace")?;
    let step = 1.0 / operator_norm_sq(a, d);
    let mut x = d.clone();
    let mut trace = Vec::with_capacity(max_steps + 1);
    for k in 0..=max_steps {
        let e = x.sub(truth);
        trace.push(e.dot(&e) / e.len() as f64);
        if k < max_steps {
            let (g, _) = least_squares_grad(a, &x, d)?;
            x.axpy(-step, &g);
        }
    }
    Ok(trace)
}

/// Step count minimizing the reconstruction error of plain gradient descent on
/// a held-out pair.
pub fn select_early_stop(a: &BlurOperator, d: &ImageTensor, truth: &ImageTensor, max_steps: usize) -> Result<usize> {
    let trace = gd_error_trace(a, d, truth, max_steps)?;
    Ok(trace
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0))
}
