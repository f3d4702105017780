use super::{anderson, picard, FixedPointResult, SolverConfig};
use crate::error::{Error, Result};
use crate::imageops::{data_fidelity_grad, BlurOperator, ImageTensor};
use crate::network::{LearnedTerm, ParamVector};

/// The DE-GRAD layer `T_Θ(x; d) = x − η (∇ₓ‖A x − d‖² + S_Θ(x))` with its
/// side inputs bound.
pub struct DegradMap<'a, S: LearnedTerm> {
    pub term: &'a S,
    pub theta: &'a ParamVector,
    pub blur: &'a BlurOperator,
    pub measurement: &'a ImageTensor,
    pub eta: f64,
}

impl<S: LearnedTerm> Clone for DegradMap<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: LearnedTerm> Copy for DegradMap<'_, S> {}

impl<'a, S: LearnedTerm> DegradMap<'a, S> {
    pub fn new(
        term: &'a S,
        theta: &'a ParamVector,
        blur: &'a BlurOperator,
        measurement: &'a ImageTensor,
        eta: f64,
    ) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("step size eta must be nonnegative, got {eta}")));
        }
        Ok(Self {
            term,
            theta,
            blur,
            measurement,
            eta,
        })
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        x.check_same_shape(self.measurement, "t_map")?;
        let mut step = data_fidelity_grad(self.blur, x, self.measurement)?;
        step.axpy(1.0, &self.term.forward(self.theta, x)?);
        let mut out = x.clone();
        out.axpy(-self.eta, &step);
        Ok(out)
    }

    /// `‖T(x) − x‖₂ / sqrt(n)`
    pub fn residual(&self, x: &ImageTensor) -> Result<f64> {
        Ok(self.apply(x)?.sub(x).rms())
    }
}

/// One application of the DE-GRAD map.
pub fn t_map<S: LearnedTerm>(
    term: &S,
    theta: &ParamVector,
    blur: &BlurOperator,
    d: &ImageTensor,
    x: &ImageTensor,
    eta: f64,
) -> Result<ImageTensor> {
    DegradMap::new(term, theta, blur, d, eta)?.apply(x)
}

pub fn solve_picard<S: LearnedTerm>(
    term: &S,
    theta: &ParamVector,
    blur: &BlurOperator,
    d: &ImageTensor,
    x0: &ImageTensor,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<FixedPointResult> {
    let map = DegradMap::new(term, theta, blur, d, eta)?;
    picard(|x| map.apply(x), x0, cfg)
}

pub fn solve_anderson<S: LearnedTerm>(
    term: &S,
    theta: &ParamVector,
    blur: &BlurOperator,
    d: &ImageTensor,
    x0: &ImageTensor,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<FixedPointResult> {
    let map = DegradMap::new(term, theta, blur, d, eta)?;
    anderson(|x| map.apply(x), x0, cfg)
}
