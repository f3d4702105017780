use std::collections::VecDeque;

use super::{FixedPointResult, Monitor, SolverConfig};
use crate::error::Result;
use crate::imageops::ImageTensor;

struct Entry {
    x: ImageTensor,
    g: ImageTensor,
    f: ImageTensor,
}

/// Solves `H y = b` for symmetric positive definite `H` (row-major, `n × n`).
/// Returns `None` when the factorization breaks down.
fn cholesky_solve(h: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * y[k]).sum();
        y[i] = (y[i] - s) / l[i * n + i];
    }
    y.iter().all(|v| v.is_finite()).then_some(y)
}

/// Mixing weights `α = argmin ‖Σ αᵢ fᵢ‖² + λ‖α‖²` subject to `Σ αᵢ = 1`.
///
/// The constrained minimizer is `α = H⁻¹1 / (1ᵀH⁻¹1)` with `H = FᵀF + λI`;
/// `λ = reg · max diag(FᵀF)` keeps the regularization scale-free.
fn mixing_weights(hist: &VecDeque<Entry>, reg: f64) -> Option<Vec<f64>> {
    let n = hist.len();
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = hist[i].f.dot(&hist[j].f);
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    let scale = (0..n).map(|i| h[i * n + i]).fold(0.0, f64::max);
    let lambda = reg * scale;
    for i in 0..n {
        h[i * n + i] += lambda;
    }
    let y = cholesky_solve(&h, &vec![1.0; n], n)?;
    let total: f64 = y.iter().sum();
    if !total.is_finite() || total.abs() < f64::MIN_POSITIVE {
        return None;
    }
    Some(y.iter().map(|v| v / total).collect())
}

/// Anderson-accelerated fixed-point iteration for an arbitrary map.
///
/// Keeps the last `anderson_memory` iterates; with memory 1 and mixing 1 it
/// performs exactly the Picard updates. When the mixing problem is singular
/// the iteration takes a plain relaxed step instead and counts it in
/// [`FixedPointResult::fallback_steps`].
pub fn anderson<F>(mut map: F, x0: &ImageTensor, cfg: &SolverConfig) -> Result<FixedPointResult>
where
    F: FnMut(&ImageTensor) -> Result<ImageTensor>,
{
    cfg.validate()?;
    let beta = cfg.anderson_mixing;
    let mut monitor = Monitor::new();
    let mut hist: VecDeque<Entry> = VecDeque::with_capacity(cfg.anderson_memory + 1);
    let mut fallbacks = 0;
    let mut x = x0.clone();
    for k in 0..=cfg.max_iters {
        let g = map(&x)?;
        let f = g.sub(&x);
        let r = f.rms();
        monitor.record(r)?;
        if r <= cfg.tol {
            return Ok(monitor.finish(x, k, true, fallbacks));
        }
        if k == cfg.max_iters {
            break;
        }
        hist.push_back(Entry { x, g, f });
        if hist.len() > cfg.anderson_memory {
            hist.pop_front();
        }
        let weights = if hist.len() > 1 {
            let w = mixing_weights(&hist, cfg.anderson_reg);
            if w.is_none() {
                fallbacks += 1;
            }
            w
        } else {
            None
        };
        x = match weights {
            Some(alpha) => {
                let mut next = hist[0].g.zeros_like();
                for (a, e) in alpha.iter().zip(&hist) {
                    next.axpy(beta * a, &e.g);
                    if beta < 1.0 {
                        next.axpy((1.0 - beta) * a, &e.x);
                    }
                }
                next
            }
            None => {
                let last = hist.back().expect("just pushed");
                if beta == 1.0 {
                    last.g.clone()
                } else {
                    let mut next = last.g.scaled(beta);
                    next.axpy(1.0 - beta, &last.x);
                    next
                }
            }
        };
    }
    Ok(monitor.finish(x, cfg.max_iters, false, fallbacks))
}
