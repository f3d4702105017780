use super::config::OptimizerKind;
use crate::network::ParamVector;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order update rule applied to the averaged batch gradient.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { rate: f64 },
    Adam { rate: f64, m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, rate: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { rate },
            OptimizerKind::Adam => Optimizer::Adam {
                rate,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
                t: 0,
            },
        }
    }

    pub fn step(&mut self, theta: &mut ParamVector, grad: &ParamVector) {
        match self {
            Optimizer::Sgd { rate } => {
                // A zero rate must leave Θ bitwise unchanged.
                if *rate != 0.0 {
                    theta.axpy(-*rate, grad);
                }
            }
            Optimizer::Adam { rate, m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t);
                let c2 = 1.0 - ADAM_BETA2.powi(*t);
                for (i, (p, g)) in theta.as_mut_slice().iter_mut().zip(grad.as_slice()).enumerate() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    if *rate != 0.0 {
                        *p -= *rate * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
