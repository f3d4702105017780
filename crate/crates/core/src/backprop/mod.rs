//! Parameter gradients through a converged fixed point.
//!
//! With `J = I − ∂T/∂x` at `x*` and `g = dℓ/dx*`, the exact gradient is
//! `g J⁻¹ ∂T/∂Θ`. Three schemes approximate or compute the left factor
//! `w ≈ g J⁻¹`:
//!
//! * **JFB** replaces `J⁻¹` by the identity, `w = g`;
//! * **Neumann-k** truncates `J⁻¹ = Σ (∂T/∂x)ʲ` after `k + 1` terms;
//! * **Jacobian-CG** solves `w J Jᵀ = g Jᵀ` with matrix-free conjugate gradient.
//!
//! `x` enters `∂T/∂Θ` only through `S_Θ`, so every scheme finishes with a
//! single `−η · wᵀ ∂S/∂Θ`.

mod cg;

use serde::{Deserialize, Serialize};

pub use cg::{conjugate_gradient, CgOutcome};

use crate::error::{Error, Result};
use crate::fixedpoint::{DegradMap, FixedPointResult};
use crate::imageops::ImageTensor;
use crate::network::{LearnedTerm, Linearization, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Jfb,
    JacobianCg,
    NeumannK,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Jfb => "jfb",
            SchemeKind::JacobianCg => "jacobian_cg",
            SchemeKind::NeumannK => "neumann_k",
        })
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jfb" => Ok(SchemeKind::Jfb),
            "jacobian_cg" | "cg" => Ok(SchemeKind::JacobianCg),
            "neumann_k" | "neumann" => Ok(SchemeKind::NeumannK),
            other => Err(Error::invalid(format!("unknown gradient scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradScheme {
    pub kind: SchemeKind,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub neumann_k: usize,
}

impl Default for GradScheme {
    fn default() -> Self {
        Self::jfb()
    }
}

impl GradScheme {
    pub fn jfb() -> Self {
        Self {
            kind: SchemeKind::Jfb,
            cg_tol: 1e-8,
            cg_max_iters: 200,
            neumann_k: 0,
        }
    }

    pub fn jacobian_cg() -> Self {
        Self {
            kind: SchemeKind::JacobianCg,
            ..Self::jfb()
        }
    }

    pub fn neumann(k: usize) -> Self {
        Self {
            kind: SchemeKind::NeumannK,
            neumann_k: k,
            ..Self::jfb()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) {
            return Err(Error::invalid("cg_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub grad: ParamVector,
    pub scheme: GradScheme,
    /// Conjugate-gradient iterations (0 unless the scheme is Jacobian-CG).
    pub cg_iters: usize,
    /// Relative residual of the linear solve (0 unless Jacobian-CG).
    pub residual: f64,
}

/// `dℓ/dx*` for `ℓ(x*, x) = ‖x* − x‖² / n`.
pub fn loss_grad_at_fixed_point(x_star: &ImageTensor, x_true: &ImageTensor) -> Result<ImageTensor> {
    x_star.check_same_shape(x_true, "loss gradient")?;
    let mut g = x_star.sub(x_true);
    g.scale(2.0 / x_star.len() as f64);
    Ok(g)
}

/// Mean squared error loss `‖x* − x‖² / n`.
pub fn mse_loss(x_star: &ImageTensor, x_true: &ImageTensor) -> Result<f64> {
    x_star.check_same_shape(x_true, "loss")?;
    let d = x_star.sub(x_true);
    Ok(d.dot(&d) / d.len() as f64)
}

/// The DE-GRAD map linearized at an equilibrium.
///
/// Holds one forward trace of `S_Θ` at `x*`; every Jacobian product reuses it.
pub struct Equilibrium<'a, S: LearnedTerm + 'a> {
    map: DegradMap<'a, S>,
    lin: S::Linearized<'a>,
    x_star: ImageTensor,
}

impl<'a, S: LearnedTerm + 'a> Equilibrium<'a, S> {
    /// Linearizes at `x_star` without checking that it is a fixed point.
    pub fn at(map: DegradMap<'a, S>, x_star: &ImageTensor) -> Result<Self> {
        x_star.check_same_shape(map.measurement, "equilibrium")?;
        let lin = map.term.linearize(map.theta, x_star)?;
        Ok(Self {
            map,
            lin,
            x_star: x_star.clone(),
        })
    }

    /// Linearizes at a solver result, which must have converged.
    pub fn from_solution(map: DegradMap<'a, S>, fp: &FixedPointResult) -> Result<Self> {
        if !fp.converged {
            return Err(Error::Precondition(format!(
                "x* is not a converged fixed point (residual {:.3e} after {} iterations)",
                fp.final_residual(),
                fp.iters
            )));
        }
        Self::at(map, &fp.x_star)
    }

    pub fn x_star(&self) -> &ImageTensor {
        &self.x_star
    }

    pub fn eta(&self) -> f64 {
        self.map.eta
    }

    /// `2 AᵀA u + (∂S/∂x) u`, i.e. `(I − ∂T/∂x) u / η`.
    fn hessian_plus_jvp(&self, u: &ImageTensor) -> Result<ImageTensor> {
        let mut out = self.map.blur.normal(u)?;
        out.scale(2.0);
        out.axpy(1.0, &self.lin.jvp(u)?);
        Ok(out)
    }

    /// `vᵀ(2 AᵀA + ∂S/∂x)`; `AᵀA` is self-adjoint.
    fn hessian_plus_vjp(&self, v: &ImageTensor) -> Result<ImageTensor> {
        let mut out = self.map.blur.normal(v)?;
        out.scale(2.0);
        out.axpy(1.0, &self.lin.vjp(v)?);
        Ok(out)
    }

    /// `(∂T/∂x) u` with `∂T/∂x = I − η (2 AᵀA + ∂S/∂x)`.
    pub fn t_jvp_x(&self, u: &ImageTensor) -> Result<ImageTensor> {
        u.check_same_shape(&self.x_star, "t_jvp_x")?;
        let mut out = u.clone();
        out.axpy(-self.map.eta, &self.hessian_plus_jvp(u)?);
        Ok(out)
    }

    /// `vᵀ (∂T/∂x)`
    pub fn t_vjp_x(&self, v: &ImageTensor) -> Result<ImageTensor> {
        v.check_same_shape(&self.x_star, "t_vjp_x")?;
        let mut out = v.clone();
        out.axpy(-self.map.eta, &self.hessian_plus_vjp(v)?);
        Ok(out)
    }

    /// `J u = u − (∂T/∂x) u`, formed without the cancellation.
    pub fn jacobian_apply(&self, u: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.hessian_plus_jvp(u)?.scaled(self.map.eta))
    }

    /// `Jᵀ v`
    pub fn jacobian_transpose_apply(&self, v: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.hessian_plus_vjp(v)?.scaled(self.map.eta))
    }

    /// `wᵀ ∂T/∂Θ = −η wᵀ ∂S/∂Θ`
    pub fn param_vjp(&self, w: &ImageTensor) -> Result<ParamVector> {
        let mut grad = self.lin.vjp_params(w)?;
        grad.scale(-self.map.eta);
        Ok(grad)
    }

    /// Solves `w J = g` through the normal equations `(J Jᵀ) w = J g`.
    pub fn solve_adjoint(&self, g: &ImageTensor, tol: f64, max_iters: usize) -> Result<CgOutcome> {
        let rhs = self.jacobian_apply(g)?;
        conjugate_gradient(
            |w| self.jacobian_apply(&self.jacobian_transpose_apply(w)?),
            &rhs,
            tol,
            max_iters,
        )
    }

    /// `Σ_{j=0..=k} g (∂T/∂x)ʲ`
    pub fn neumann_series(&self, g: &ImageTensor, k: usize) -> Result<ImageTensor> {
        let mut total = g.clone();
        let mut term = g.clone();
        for _ in 0..k {
            term = self.t_vjp_x(&term)?;
            total.axpy(1.0, &term);
        }
        Ok(total)
    }

    pub fn jfb(&self, x_true: &ImageTensor) -> Result<GradResult> {
        let v = loss_grad_at_fixed_point(&self.x_star, x_true)?;
        Ok(GradResult {
            grad: self.param_vjp(&v)?,
            scheme: GradScheme::jfb(),
            cg_iters: 0,
            residual: 0.0,
        })
    }

    pub fn neumann(&self, x_true: &ImageTensor, k: usize) -> Result<GradResult> {
        let v = loss_grad_at_fixed_point(&self.x_star, x_true)?;
        let w = self.neumann_series(&v, k)?;
        Ok(GradResult {
            grad: self.param_vjp(&w)?,
            scheme: GradScheme::neumann(k),
            cg_iters: 0,
            residual: 0.0,
        })
    }

    pub fn jacobian_cg(&self, x_true: &ImageTensor, scheme: &GradScheme) -> Result<GradResult> {
        scheme.validate()?;
        let v = loss_grad_at_fixed_point(&self.x_star, x_true)?;
        let solve = self.solve_adjoint(&v, scheme.cg_tol, scheme.cg_max_iters)?;
        Ok(GradResult {
            grad: self.param_vjp(&solve.solution)?,
            scheme: *scheme,
            cg_iters: solve.iters,
            residual: solve.relative_residual,
        })
    }

    /// Dispatches on `scheme.kind`.
    pub fn gradient(&self, x_true: &ImageTensor, scheme: &GradScheme) -> Result<GradResult> {
        match scheme.kind {
            SchemeKind::Jfb => self.jfb(x_true),
            SchemeKind::NeumannK => self.neumann(x_true, scheme.neumann_k),
            SchemeKind::JacobianCg => self.jacobian_cg(x_true, scheme),
        }
    }
}

/// `vᵀ (∂T/∂x)` at `x_star`.
pub fn t_vjp_x<S: LearnedTerm>(map: DegradMap<'_, S>, x_star: &ImageTensor, v: &ImageTensor) -> Result<ImageTensor> {
    Equilibrium::at(map, x_star)?.t_vjp_x(v)
}

/// `(∂T/∂x) u` at `x_star`.
pub fn t_jvp_x<S: LearnedTerm>(map: DegradMap<'_, S>, x_star: &ImageTensor, u: &ImageTensor) -> Result<ImageTensor> {
    Equilibrium::at(map, x_star)?.t_jvp_x(u)
}

/// Jacobian-free gradient `−η · gᵀ ∂S/∂Θ` at a converged fixed point.
pub fn jfb_grad<S: LearnedTerm>(map: DegradMap<'_, S>, fp: &FixedPointResult, x_true: &ImageTensor) -> Result<GradResult> {
    Equilibrium::from_solution(map, fp)?.jfb(x_true)
}

/// Exact implicit gradient with the adjoint solved by conjugate gradient.
pub fn jacobian_cg_grad<S: LearnedTerm>(
    map: DegradMap<'_, S>,
    fp: &FixedPointResult,
    x_true: &ImageTensor,
    scheme: &GradScheme,
) -> Result<GradResult> {
    if scheme.kind != SchemeKind::JacobianCg {
        return Err(Error::invalid("jacobian_cg_grad requires a JacobianCg scheme"));
    }
    Equilibrium::from_solution(map, fp)?.jacobian_cg(x_true, scheme)
}

/// Gradient with `J⁻¹` replaced by the first `k + 1` Neumann terms.
pub fn neumann_k_grad<S: LearnedTerm>(
    map: DegradMap<'_, S>,
    fp: &FixedPointResult,
    x_true: &ImageTensor,
    k: usize,
) -> Result<GradResult> {
    Equilibrium::from_solution(map, fp)?.neumann(x_true, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_gradient_scalar_case() {
        let xs = ImageTensor::new(1, 1, 1, vec![3.0]).unwrap();
        let xt = ImageTensor::new(1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(loss_grad_at_fixed_point(&xs, &xt).unwrap().as_slice(), &[4.0]);
    }

    #[test]
    fn loss_gradient_vanishes_at_truth() {
        let x = ImageTensor::from_fn(2, 3, 3, |c, r, k| (c + r * k) as f64);
        assert!(loss_grad_at_fixed_point(&x, &x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_gradient_shape_mismatch() {
        let a = ImageTensor::zeros(1, 3, 3);
        let b = ImageTensor::zeros(1, 3, 4);
        assert!(loss_grad_at_fixed_point(&a, &b).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for kind in [SchemeKind::Jfb, SchemeKind::JacobianCg, SchemeKind::NeumannK] {
            assert_eq!(kind.to_string().parse::<SchemeKind>().unwrap(), kind);
        }
    }
}
