use super::params::ParamVector;
use crate::error::Result;
use crate::imageops::ImageTensor;

/// A trainable map `S_Θ` that can be evaluated and differentiated.
///
/// The fixed-point solvers only need [`LearnedTerm::forward`]; backpropagation
/// linearizes once at the equilibrium and then applies the Jacobian products
/// as many times as the chosen scheme requires.
pub trait LearnedTerm: Sync {
    type Linearized<'a>: Linearization
    where
        Self: 'a;

    fn forward(&self, theta: &ParamVector, x: &ImageTensor) -> Result<ImageTensor>;

    /// Records whatever is needed to apply derivatives at `x`.
    fn linearize<'a>(&'a self, theta: &'a ParamVector, x: &ImageTensor) -> Result<Self::Linearized<'a>>;
}

/// Derivatives of a [`LearnedTerm`] frozen at one input.
pub trait Linearization {
    /// `S_Θ(x)` at the linearization point.
    fn output(&self) -> &ImageTensor;

    /// `(∂S/∂x) u`
    fn jvp(&self, u: &ImageTensor) -> Result<ImageTensor>;

    /// `vᵀ (∂S/∂x)`, returned in input shape.
    fn vjp(&self, v: &ImageTensor) -> Result<ImageTensor>;

    /// `vᵀ (∂S/∂Θ)`
    fn vjp_params(&self, v: &ImageTensor) -> Result<ParamVector>;
}
