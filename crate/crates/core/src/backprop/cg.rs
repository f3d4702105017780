use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: ImageTensor,
    pub iters: usize,
    /// `‖b − M x‖ / ‖b‖` from the recurrence at exit.
    pub relative_residual: f64,
}

/// Conjugate gradient for `M x = b` with a symmetric positive (semi)definite
/// operator given as a closure. Starts from zero and stops when
/// `‖r‖ ≤ tol · ‖b‖`.
pub fn conjugate_gradient<F>(mut op: F, rhs: &ImageTensor, tol: f64, max_iters: usize) -> Result<CgOutcome>
where
    F: FnMut(&ImageTensor) -> Result<ImageTensor>,
{
    let b_norm = rhs.norm();
    let mut x = rhs.zeros_like();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iters: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let target = tol * b_norm;
    for it in 0..max_iters {
        let mp = op(&p)?;
        let pmp = p.dot(&mp);
        if !(pmp > 0.0) {
            // Curvature vanished: the operator is singular along p.
            return Err(Error::CgNotConverged {
                iters: it,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / pmp;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &mp);
        let rr_next = r.dot(&r);
        if rr_next.sqrt() <= target {
            return Ok(CgOutcome {
                solution: x,
                iters: it + 1,
                relative_residual: rr_next.sqrt() / b_norm,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        let mut next = r.clone();
        next.axpy(beta, &p);
        p = next;
    }
    Err(Error::CgNotConverged {
        iters: max_iters,
        residual: rr.sqrt() / b_norm,
    })
}
