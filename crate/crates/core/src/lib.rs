//! Deblurring with the DE-GRAD implicit network.
//!
//! A reconstruction is the fixed point `x* = T(x*)` of
//! `T(x) = x − η (∇ₓ‖A x − d‖² + S_Θ(x))`, where `A` is a Gaussian blur and
//! `S_Θ` a spectrally normalized CNN. The crate provides the operator, the
//! network with hand-written forward/reverse differentiation, Picard and
//! Anderson solvers, three ways of backpropagating through the fixed point
//! (Jacobian-free, exact implicit differentiation via conjugate gradient, and
//! truncated Neumann series), classical baselines, quality metrics and the
//! training/evaluation/benchmark pipeline.

pub mod backprop;
pub mod baselines;
pub mod error;
pub mod fixedpoint;
pub mod imageops;
pub mod metrics;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};
pub use imageops::{BlurOperator, ImageTensor, Kernel};
