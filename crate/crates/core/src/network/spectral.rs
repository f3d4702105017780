//! Spectral normalization by power iteration on each convolution operator.
//!
//! The estimate is taken on the zero-padded convolution acting on a
//! `spectral_grid × spectral_grid` image, not on the reshaped weight matrix.

use super::cnn::{LayerSpec, Network};
use super::conv;
use super::params::ParamVector;
use crate::error::{Error, Result};

fn unit(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

impl Network {
    fn power_step(&self, layer: &LayerSpec, weights: &[f64], u: &mut Vec<f64>) {
        let g = self.config().spectral_grid;
        let shape = self.conv_shape(layer, g, g);
        let v = conv::forward(shape, u, weights, None);
        let mut next = conv::transpose(shape, &v, weights);
        if unit(&mut next) > 0.0 {
            *u = next;
        }
    }

    fn operator_gain(&self, layer: &LayerSpec, weights: &[f64], u: &[f64]) -> f64 {
        let g = self.config().spectral_grid;
        let v = conv::forward(self.conv_shape(layer, g, g), u, weights, None);
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Runs `power_iters` warm-started power iterations per layer and divides
    /// every convolution whose estimated operator norm exceeds 1 by that
    /// estimate. Affine gains `|γ|/σ` above 1 are clipped to 1 as well.
    ///
    /// Mutates the stored singular-vector estimates, so calls must be
    /// serialized.
    pub fn normalize_spectral(&mut self, theta: &ParamVector, power_iters: usize) -> Result<ParamVector> {
        if power_iters == 0 {
            return Err(Error::invalid("normalize_spectral needs at least one power iteration"));
        }
        if theta.len() != self.n_params() {
            return Err(Error::invalid("parameter vector does not match the network layout"));
        }
        let mut out = theta.clone();
        let layers = self.layers.clone();
        for (l, layer) in layers.iter().enumerate() {
            let mut u = std::mem::take(&mut self.spectral[l]);
            let weights = &out.as_slice()[layer.weight.clone()];
            for _ in 0..power_iters {
                self.power_step(layer, weights, &mut u);
            }
            let sigma = self.operator_gain(layer, weights, &u);
            self.spectral[l] = u;
            if sigma > 1.0 {
                out.as_mut_slice()[layer.weight.clone()].iter_mut().for_each(|w| *w /= sigma);
            }
            if let (Some(stats), Some(gain)) = (&self.stats[l], &layer.gain) {
                for (c, g) in out.as_mut_slice()[gain.clone()].iter_mut().enumerate() {
                    let limit = (stats.var[c] + super::cnn::NORM_EPS).sqrt();
                    if g.abs() > limit {
                        *g = limit.copysign(*g);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Current per-layer operator-norm estimates (including affine gains),
    /// read from the stored singular vectors without updating them.
    pub fn layer_norm_estimates(&self, theta: &ParamVector) -> Vec<f64> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let mut gain = self.operator_gain(layer, &theta.as_slice()[layer.weight.clone()], &self.spectral[l]);
                if let (Some(stats), Some(range)) = (&self.stats[l], &layer.gain) {
                    let g = &theta.as_slice()[range.clone()];
                    let worst = (0..layer.out_ch)
                        .map(|c| g[c].abs() / (stats.var[c] + super::cnn::NORM_EPS).sqrt())
                        .fold(0.0, f64::max);
                    gain *= worst;
                }
                gain
            })
            .collect()
    }

    /// Upper-bound style Lipschitz estimate of `S_Θ`: product of the layer
    /// estimates times `contraction_scale` (ReLU is 1-Lipschitz).
    pub fn lipschitz_estimate(&self, theta: &ParamVector) -> f64 {
        self.config().contraction_scale * self.layer_norm_estimates(theta).iter().product::<f64>()
    }
}
