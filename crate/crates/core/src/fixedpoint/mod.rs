//! Forward solvers for the equilibrium `x = T_Θ(x; d)`.
//!
//! Nothing here records derivatives; the backprop module linearizes at the
//! returned fixed point afterwards.

mod anderson;
mod map;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

pub use anderson::anderson;
pub use map::{solve_anderson, solve_picard, t_map, DegradMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop once `‖T(x) − x‖₂ / sqrt(n)` drops to this value.
    pub tol: f64,
    pub max_iters: usize,
    /// Number of stored iterates, the current one included; 1 is plain Picard.
    pub anderson_memory: usize,
    /// Tikhonov weight for the mixing least-squares problem, relative to its scale.
    pub anderson_reg: f64,
    /// Mixing parameter β ∈ (0, 1].
    pub anderson_mixing: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 100,
            anderson_memory: 5,
            anderson_reg: 1e-4,
            anderson_mixing: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tol must be positive"));
        }
        if self.anderson_memory == 0 {
            return Err(Error::invalid("anderson_memory must be at least 1"));
        }
        if !(self.anderson_mixing > 0.0 && self.anderson_mixing <= 1.0) {
            return Err(Error::invalid("anderson_mixing must lie in (0, 1]"));
        }
        if !(self.anderson_reg >= 0.0) {
            return Err(Error::invalid("anderson_reg must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub x_star: ImageTensor,
    /// `‖T(xᵏ) − xᵏ‖₂ / sqrt(n)` for `k = 0..=iters`.
    pub residuals: Vec<f64>,
    /// Number of updates applied to the initial guess.
    pub iters: usize,
    pub converged: bool,
    /// Anderson iterations that fell back to a plain step.
    pub fallback_steps: usize,
}

impl FixedPointResult {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::INFINITY)
    }

    /// Writes `iter,residual` rows for convergence plots.
    pub fn write_residual_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iter", "residual"])?;
        for (k, r) in self.residuals.iter().enumerate() {
            w.write_record([k.to_string(), format!("{r:e}")])?;
        }
        w.flush().map_err(|e| Error::io("<residual csv>", e))?;
        Ok(())
    }
}

/// Residual bookkeeping shared by both solvers, including divergence detection.
pub(crate) struct Monitor {
    residuals: Vec<f64>,
    above: usize,
}

/// Residual growth factor over the initial residual that counts as blow-up.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive blown-up iterations before giving up.
const DIVERGENCE_PATIENCE: usize = 5;

impl Monitor {
    pub(crate) fn new() -> Self {
        Self {
            residuals: Vec::new(),
            above: 0,
        }
    }

    /// Records a residual; errors once the iteration has clearly diverged.
    pub(crate) fn record(&mut self, r: f64) -> Result<()> {
        self.residuals.push(r);
        let first = self.residuals[0];
        if !r.is_finite() {
            return Err(self.diverged());
        }
        if r > DIVERGENCE_FACTOR * first {
            self.above += 1;
            if self.above >= DIVERGENCE_PATIENCE {
                return Err(self.diverged());
            }
        } else {
            self.above = 0;
        }
        Ok(())
    }

    fn diverged(&self) -> Error {
        Error::NonContraction {
            residuals: self.residuals.clone(),
            first: self.residuals[0],
            last: *self.residuals.last().expect("nonempty"),
        }
    }

    pub(crate) fn finish(self, x_star: ImageTensor, iters: usize, converged: bool, fallback_steps: usize) -> FixedPointResult {
        FixedPointResult {
            x_star,
            residuals: self.residuals,
            iters,
            converged,
            fallback_steps,
        }
    }
}

/// Plain fixed-point iteration `xᵏ⁺¹ = T(xᵏ)` for an arbitrary map.
pub fn picard<F>(mut map: F, x0: &ImageTensor, cfg: &SolverConfig) -> Result<FixedPointResult>
where
    F: FnMut(&ImageTensor) -> Result<ImageTensor>,
{
    cfg.validate()?;
    let mut monitor = Monitor::new();
    let mut x = x0.clone();
    for k in 0..=cfg.max_iters {
        let tx = map(&x)?;
        let r = tx.sub(&x).rms();
        monitor.record(r)?;
        if r <= cfg.tol {
            return Ok(monitor.finish(x, k, true, 0));
        }
        if k == cfg.max_iters {
            break;
        }
        x = tx;
    }
    Ok(monitor.finish(x, cfg.max_iters, false, 0))
}
