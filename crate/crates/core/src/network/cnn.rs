use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvShape};
use super::params::{ParamKind, ParamLayout, ParamVector};
use super::term::{LearnedTerm, Linearization};
use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

/// Normalization applied after each intermediate convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    /// `γ (z − μ) / sqrt(σ² + ε) + β` with learned `γ, β` and statistics that
    /// stay frozen while a fixed point is being solved.
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub n_layers: usize,
    /// Image channels at the network input and output.
    pub channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    /// Factor multiplying the CNN output; keeps `S_Θ` strictly below 1-Lipschitz.
    pub contraction_scale: f64,
    pub normalization: Normalization,
    /// Side length of the grid the per-layer power iterations run on.
    pub spectral_grid: usize,
    pub init_power_iters: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    pub fn desk() -> Self {
        Self {
            n_layers: 17,
            channels: 1,
            hidden_channels: 16,
            kernel_size: 3,
            contraction_scale: 0.9,
            normalization: Normalization::None,
            spectral_grid: 32,
            init_power_iters: 20,
        }
    }

    pub fn paper() -> Self {
        Self {
            channels: 3,
            hidden_channels: 64,
            normalization: Normalization::Affine,
            spectral_grid: 64,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 2 {
            return Err(Error::invalid("network needs at least 2 layers"));
        }
        if self.channels == 0 || self.hidden_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::invalid("network kernel size must be odd"));
        }
        if !(self.contraction_scale > 0.0 && self.contraction_scale <= 1.0) {
            return Err(Error::invalid(format!(
                "contraction_scale must lie in (0, 1], got {}",
                self.contraction_scale
            )));
        }
        if self.spectral_grid < self.kernel_size {
            return Err(Error::invalid("spectral_grid must be at least the kernel size"));
        }
        Ok(())
    }
}

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub relu: bool,
    pub affine: bool,
    pub weight: std::ops::Range<usize>,
    pub bias: std::ops::Range<usize>,
    pub gain: Option<std::ops::Range<usize>>,
    pub shift: Option<std::ops::Range<usize>>,
}

/// Frozen per-channel statistics of an affine-normalized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl NormStats {
    fn inv_std(&self, c: usize) -> f64 {
        1.0 / (self.var[c] + NORM_EPS).sqrt()
    }
}

/// The trainable CNN `S_Θ`.
///
/// Layer 0 is conv → ReLU, layers `1..L-1` are conv → [affine] → ReLU and the
/// last layer is a plain conv; the output is multiplied by
/// `contraction_scale`. Trainable weights live in a separate [`ParamVector`];
/// this struct holds the architecture plus the non-trainable state (power
/// iteration vectors and frozen normalization statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetConfig,
    pub(crate) layers: Vec<LayerSpec>,
    layout: Arc<ParamLayout>,
    /// Right singular vector estimate per layer, `in_ch × g × g`.
    pub(crate) spectral: Vec<Vec<f64>>,
    /// `Some` for affine-normalized layers.
    pub(crate) stats: Vec<Option<NormStats>>,
}

impl Network {
    /// Builds the architecture with unit-norm random power-iteration vectors
    /// but no parameters; see [`Network::initialize`] for a ready network.
    pub fn with_config(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut layout = ParamLayout::new();
        let mut layers = Vec::with_capacity(config.n_layers);
        let mut stats = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let in_ch = if l == 0 { config.channels } else { config.hidden_channels };
            let last = l + 1 == config.n_layers;
            let out_ch = if last { config.channels } else { config.hidden_channels };
            let affine = l > 0 && !last && config.normalization == Normalization::Affine;
            let w0 = layout.push(l, ParamKind::Weight, vec![out_ch, in_ch, k, k]);
            let b0 = layout.push(l, ParamKind::Bias, vec![out_ch]);
            let (gain, shift) = if affine {
                let g0 = layout.push(l, ParamKind::Scale, vec![out_ch]);
                let s0 = layout.push(l, ParamKind::Shift, vec![out_ch]);
                (Some(g0..g0 + out_ch), Some(s0..s0 + out_ch))
            } else {
                (None, None)
            };
            layers.push(LayerSpec {
                in_ch,
                out_ch,
                relu: !last,
                affine,
                weight: w0..w0 + out_ch * in_ch * k * k,
                bias: b0..b0 + out_ch,
                gain,
                shift,
            });
            stats.push(affine.then(|| NormStats {
                mean: vec![0.0; out_ch],
                var: vec![1.0; out_ch],
            }));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let g = config.spectral_grid;
        let spectral = layers
            .iter()
            .map(|layer| {
                let mut u: Vec<f64> = (0..layer.in_ch * g * g).map(|_| rng.sample(StandardNormal)).collect();
                let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                u.iter_mut().for_each(|v| *v /= n);
                u
            })
            .collect();
        Ok(Self {
            config,
            layers,
            layout: Arc::new(layout),
            spectral,
            stats,
        })
    }

    /// Random initialization followed by spectral normalization.
    ///
    /// Weights are i.i.d. uniform on `[-a, a]` with `a = sqrt(1 / fan_in)`,
    /// biases and shifts are 0 and gains 1. Everything derives from `seed`.
    pub fn initialize(config: NetConfig, seed: u64) -> Result<(Self, ParamVector)> {
        let mut net = Self::with_config(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ParamVector::zeros(Arc::clone(&net.layout));
        let k = net.config.kernel_size;
        for layer in &net.layers {
            let bound = (1.0 / (layer.in_ch * k * k) as f64).sqrt();
            for w in &mut theta.as_mut_slice()[layer.weight.clone()] {
                *w = rng.gen_range(-bound..=bound);
            }
            if let Some(gain) = &layer.gain {
                theta.as_mut_slice()[gain.clone()].iter_mut().for_each(|g| *g = 1.0);
            }
        }
        let iters = net.config.init_power_iters.max(1);
        let theta = net.normalize_spectral(&theta, iters)?;
        Ok((net, theta))
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.layout.total_len()
    }

    pub fn norm_stats(&self) -> impl Iterator<Item = Option<&NormStats>> {
        self.stats.iter().map(Option::as_ref)
    }

    fn check(&self, theta: &ParamVector, x: &ImageTensor) -> Result<()> {
        if theta.len() != self.layout.total_len() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, network expects {}",
                theta.len(),
                self.layout.total_len()
            )));
        }
        if x.channels() != self.config.channels {
            return Err(Error::invalid(format!(
                "network expects {} channels, got {}",
                self.config.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub(crate) fn conv_shape(&self, layer: &LayerSpec, h: usize, w: usize) -> ConvShape {
        ConvShape {
            in_ch: layer.in_ch,
            out_ch: layer.out_ch,
            k: self.config.kernel_size,
            h,
            w,
        }
    }

    /// Runs the network and keeps the intermediates needed for differentiation.
    fn trace(&self, theta: &ParamVector, x: &ImageTensor) -> Result<Trace> {
        self.check(theta, x)?;
        let (h, w) = (x.height(), x.width());
        let p = theta.as_slice();
        let n = h * w;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut normalized = Vec::with_capacity(self.layers.len());
        let mut current = x.as_slice().to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let shape = self.conv_shape(layer, h, w);
            let mut z = conv::forward(shape, &current, &p[layer.weight.clone()], Some(&p[layer.bias.clone()]));
            if let Some(stats) = &self.stats[l] {
                let gain = &p[layer.gain.clone().expect("affine layer has gain")];
                let shift = &p[layer.shift.clone().expect("affine layer has shift")];
                let mut zhat = z.clone();
                for (c, plane) in zhat.chunks_exact_mut(n).enumerate() {
                    let (mu, inv) = (stats.mean[c], stats.inv_std(c));
                    plane.iter_mut().for_each(|v| *v = (*v - mu) * inv);
                }
                for (c, (dst, src)) in z.chunks_exact_mut(n).zip(zhat.chunks_exact(n)).enumerate() {
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = gain[c] * s + shift[c];
                    }
                }
                normalized.push(Some(zhat));
            } else {
                normalized.push(None);
            }
            let next = if layer.relu {
                z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
            } else {
                z.clone()
            };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        let scale = self.config.contraction_scale;
        current.iter_mut().for_each(|v| *v *= scale);
        Ok(Trace {
            height: h,
            width: w,
            inputs,
            pre,
            normalized,
            output: ImageTensor::from_raw(x.channels(), h, w, current),
        })
    }

    /// `S_Θ(x) = contraction_scale · CNN(x)`; deterministic.
    pub fn forward(&self, theta: &ParamVector, x: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.trace(theta, x)?.output)
    }

    pub fn linearize_at<'a>(&'a self, theta: &'a ParamVector, x: &ImageTensor) -> Result<NetworkLinearization<'a>> {
        Ok(NetworkLinearization {
            net: self,
            theta,
            trace: self.trace(theta, x)?,
        })
    }

    /// `vᵀ ∂S/∂x`, reshaped to the input shape.
    pub fn vjp_input(&self, theta: &ParamVector, x: &ImageTensor, v: &ImageTensor) -> Result<ImageTensor> {
        self.linearize_at(theta, x)?.vjp(v)
    }

    /// `vᵀ ∂S/∂Θ`
    pub fn vjp_params(&self, theta: &ParamVector, x: &ImageTensor, v: &ImageTensor) -> Result<ParamVector> {
        self.linearize_at(theta, x)?.vjp_params(v)
    }

    /// `(∂S/∂x) u`, exact forward mode.
    pub fn jvp_input(&self, theta: &ParamVector, x: &ImageTensor, u: &ImageTensor) -> Result<ImageTensor> {
        self.linearize_at(theta, x)?.jvp(u)
    }

    /// Re-estimates the frozen normalization statistics from the pre-normalized
    /// activations produced by `inputs`. No-op without affine layers.
    pub fn refresh_statistics(&mut self, theta: &ParamVector, inputs: &[ImageTensor]) -> Result<()> {
        if inputs.is_empty() || self.stats.iter().all(Option::is_none) {
            return Ok(());
        }
        // Statistics of layer l depend on layers < l, so refresh front to back.
        for l in 0..self.layers.len() {
            if self.stats[l].is_none() {
                continue;
            }
            let out_ch = self.layers[l].out_ch;
            let mut sum = vec![0.0; out_ch];
            let mut sq = vec![0.0; out_ch];
            let mut count = 0usize;
            for x in inputs {
                let tr = self.trace(theta, x)?;
                let n = tr.height * tr.width;
                let p = theta.as_slice();
                let layer = &self.layers[l];
                let z = conv::forward(
                    self.conv_shape(layer, tr.height, tr.width),
                    &tr.inputs[l],
                    &p[layer.weight.clone()],
                    Some(&p[layer.bias.clone()]),
                );
                for (c, plane) in z.chunks_exact(n).enumerate() {
                    sum[c] += plane.iter().sum::<f64>();
                    sq[c] += plane.iter().map(|v| v * v).sum::<f64>();
                }
                count += n;
            }
            let stats = self.stats[l].as_mut().expect("checked above");
            for c in 0..out_ch {
                let mean = sum[c] / count as f64;
                stats.mean[c] = mean;
                stats.var[c] = (sq[c] / count as f64 - mean * mean).max(0.0);
            }
        }
        Ok(())
    }
}

pub(crate) struct Trace {
    height: usize,
    width: usize,
    /// Input to each layer's convolution.
    inputs: Vec<Vec<f64>>,
    /// Post-normalization, pre-ReLU activations.
    pre: Vec<Vec<f64>>,
    /// `(z − μ)/σ` for affine layers.
    normalized: Vec<Option<Vec<f64>>>,
    output: ImageTensor,
}

/// Jacobian products of the CNN at a fixed input.
pub struct NetworkLinearization<'a> {
    net: &'a Network,
    theta: &'a ParamVector,
    trace: Trace,
}

impl NetworkLinearization<'_> {
    fn check_like_output(&self, v: &ImageTensor, what: &str) -> Result<()> {
        v.check_same_shape(&self.trace.output, what)
    }

    /// Reverse sweep; accumulates parameter gradients when `grad_params` is given.
    fn backward(&self, v: &ImageTensor, mut grad_params: Option<&mut ParamVector>) -> Option<ImageTensor> {
        let net = self.net;
        let tr = &self.trace;
        let (h, w) = (tr.height, tr.width);
        let n = h * w;
        let p = self.theta.as_slice();
        let mut g: Vec<f64> = v.as_slice().iter().map(|x| x * net.config.contraction_scale).collect();
        for (l, layer) in net.layers.iter().enumerate().rev() {
            if layer.relu {
                for (gi, &a) in g.iter_mut().zip(&tr.pre[l]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            if let Some(stats) = &net.stats[l] {
                let gain_range = layer.gain.clone().expect("affine layer has gain");
                let shift_range = layer.shift.clone().expect("affine layer has shift");
                if let Some(gp) = grad_params.as_deref_mut() {
                    let zhat = tr.normalized[l].as_ref().expect("affine layer records normalized input");
                    let gs = gp.as_mut_slice();
                    for c in 0..layer.out_ch {
                        let gc = &g[c * n..(c + 1) * n];
                        gs[gain_range.start + c] += gc.iter().zip(&zhat[c * n..(c + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
                        gs[shift_range.start + c] += gc.iter().sum::<f64>();
                    }
                }
                let gain = &p[gain_range];
                for (c, plane) in g.chunks_exact_mut(n).enumerate() {
                    let factor = gain[c] * stats.inv_std(c);
                    plane.iter_mut().for_each(|v| *v *= factor);
                }
            }
            let shape = net.conv_shape(layer, h, w);
            if let Some(gp) = grad_params.as_deref_mut() {
                let gs = gp.as_mut_slice();
                let (wpart, rest) = gs.split_at_mut(layer.bias.start);
                conv::param_grad(
                    shape,
                    &tr.inputs[l],
                    &g,
                    &mut wpart[layer.weight.clone()],
                    &mut rest[..layer.out_ch],
                );
            }
            if l > 0 || grad_params.is_none() {
                g = conv::transpose(shape, &g, &p[layer.weight.clone()]);
            } else {
                // The input gradient of layer 0 is not needed for parameter gradients.
                return None;
            }
        }
        Some(ImageTensor::from_raw(net.config.channels, h, w, g))
    }
}

impl Linearization for NetworkLinearization<'_> {
    fn output(&self) -> &ImageTensor {
        &self.trace.output
    }

    fn jvp(&self, u: &ImageTensor) -> Result<ImageTensor> {
        self.check_like_output(u, "jvp_input")?;
        let net = self.net;
        let tr = &self.trace;
        let (h, w) = (tr.height, tr.width);
        let n = h * w;
        let p = self.theta.as_slice();
        let mut t = u.as_slice().to_vec();
        for (l, layer) in net.layers.iter().enumerate() {
            let mut dz = conv::forward(net.conv_shape(layer, h, w), &t, &p[layer.weight.clone()], None);
            if let Some(stats) = &net.stats[l] {
                let gain = &p[layer.gain.clone().expect("affine layer has gain")];
                for (c, plane) in dz.chunks_exact_mut(n).enumerate() {
                    let factor = gain[c] * stats.inv_std(c);
                    plane.iter_mut().for_each(|v| *v *= factor);
                }
            }
            if layer.relu {
                for (d, &a) in dz.iter_mut().zip(&tr.pre[l]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            t = dz;
        }
        let scale = net.config.contraction_scale;
        t.iter_mut().for_each(|v| *v *= scale);
        Ok(ImageTensor::from_raw(net.config.channels, h, w, t))
    }

    fn vjp(&self, v: &ImageTensor) -> Result<ImageTensor> {
        self.check_like_output(v, "vjp_input")?;
        Ok(self.backward(v, None).expect("input gradient requested"))
    }

    fn vjp_params(&self, v: &ImageTensor) -> Result<ParamVector> {
        self.check_like_output(v, "vjp_params")?;
        let mut grad = self.theta.zeros_like();
        self.backward(v, Some(&mut grad));
        Ok(grad)
    }
}

impl LearnedTerm for Network {
    type Linearized<'a> = NetworkLinearization<'a>;

    fn forward(&self, theta: &ParamVector, x: &ImageTensor) -> Result<ImageTensor> {
        Network::forward(self, theta, x)
    }

    fn linearize<'a>(&'a self, theta: &'a ParamVector, x: &ImageTensor) -> Result<NetworkLinearization<'a>> {
        self.linearize_at(theta, x)
    }
}
