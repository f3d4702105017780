use crate::error::{Error, Result};

/// Square convolution kernel of odd size whose origin is the central tap.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Wraps row-major `size × size` weights. The kernel need not be symmetric.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd and >= 1, got {size}")));
        }
        if weights.len() != size * size {
            return Err(Error::invalid(format!(
                "kernel of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("kernel weights must be finite"));
        }
        Ok(Self { size, weights })
    }

    /// The single-tap identity kernel.
    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            size: self.size,
            weights: self.weights.iter().map(|w| w * alpha).collect(),
        }
    }

    /// The kernel rotated by 180°, i.e. the kernel of the adjoint convolution.
    pub fn flipped(&self) -> Self {
        Self {
            size: self.size,
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.size;
        (0..n).all(|r| {
            (0..n).all(|c| {
                let w = self.weight(r, c);
                w == self.weight(c, r) && w == self.weight(n - 1 - r, c) && w == self.weight(r, n - 1 - c)
            })
        })
    }
}

/// Sampled 2-D Gaussian density on the centered integer grid, normalized to sum 1.
///
/// `weights(i, j) ∝ exp(-(i² + j²) / (2 · variance))` for `i, j ∈ [-size/2, size/2]`.
pub fn make_gaussian_kernel(size: usize, variance: f64) -> Result<Kernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::invalid(format!(
            "gaussian kernel size must be odd and >= 1, got {size}"
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian variance must be positive and finite, got {variance}"
        )));
    }
    let r = (size / 2) as i64;
    // Evaluate each 1-D factor once; the symmetric grid makes the product
    // exactly symmetric under flips and transposition.
    let profile: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * variance)).exp())
        .collect();
    let mut weights = Vec::with_capacity(size * size);
    for a in &profile {
        for b in &profile {
            weights.push(a * b);
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Kernel::from_weights(size, weights)
}
