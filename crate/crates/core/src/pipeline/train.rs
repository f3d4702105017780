use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::data::{derive_seed, Sample, TrainingData};
use super::optim::Optimizer;
use crate::backprop::{mse_loss, Equilibrium, SchemeKind};
use crate::error::{Error, Result};
use crate::fixedpoint::{anderson, DegradMap};
use crate::imageops::{BlurOperator, ImageTensor};
use crate::network::{Network, ParamVector};

const SHUFFLE_TAG: u64 = 0x7472_6169_6e00;

/// What happened to one sample during a parameter update.
#[derive(Debug, Clone)]
pub enum SampleOutcome {
    Used {
        loss: f64,
        grad: ParamVector,
        x_star: ImageTensor,
        solver_iters: usize,
        cg_iters: usize,
        fell_back: bool,
    },
    /// The fixed-point solve diverged or ran out of iterations.
    Skipped { reason: String },
}

/// Averaged gradient and bookkeeping for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    /// `None` when every sample was skipped.
    pub grad: Option<ParamVector>,
    pub losses: Vec<f64>,
    pub x_stars: Vec<ImageTensor>,
    pub skipped: usize,
    pub fallbacks: usize,
    pub solver_iters: usize,
    pub cg_iters: usize,
}

/// Fixed-point solve plus the configured gradient scheme for one sample.
pub fn sample_gradient(net: &Network, theta: &ParamVector, blur: &BlurOperator, sample: &Sample, cfg: &RunConfig) -> Result<SampleOutcome> {
    let map = DegradMap::new(net, theta, blur, &sample.measurement, cfg.eta)?;
    let fp = match anderson(|x| map.apply(x), &sample.measurement, &cfg.solver) {
        Ok(fp) => fp,
        Err(Error::NonContraction { first, last, .. }) => {
            return Ok(SampleOutcome::Skipped {
                reason: format!("diverged: residual {first:.2e} -> {last:.2e}"),
            })
        }
        Err(e) => return Err(e),
    };
    if !fp.converged {
        return Ok(SampleOutcome::Skipped {
            reason: format!("no convergence after {} iterations (residual {:.2e})", fp.iters, fp.final_residual()),
        });
    }
    let eq = Equilibrium::from_solution(map, &fp)?;
    let (result, fell_back) = match eq.gradient(&sample.truth, &cfg.scheme) {
        Err(Error::CgNotConverged { iters, residual }) if cfg.cg_fallback_to_jfb && cfg.scheme.kind == SchemeKind::JacobianCg => {
            log::info!("conjugate gradient stalled ({iters} iterations, residual {residual:.2e}); using the Jacobian-free gradient");
            (eq.jfb(&sample.truth)?, true)
        }
        other => (other?, false),
    };
    Ok(SampleOutcome::Used {
        loss: mse_loss(&fp.x_star, &sample.truth)?,
        grad: result.grad,
        x_star: fp.x_star,
        solver_iters: fp.iters,
        cg_iters: result.cg_iters,
        fell_back,
    })
}

/// Per-sample gradients computed concurrently, then summed in batch order.
pub fn batch_gradient(net: &Network, theta: &ParamVector, blur: &BlurOperator, batch: &[&Sample], cfg: &RunConfig) -> Result<BatchGradient> {
    let outcomes = batch
        .par_iter()
        .map(|s| sample_gradient(net, theta, blur, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BatchGradient {
        grad: None,
        losses: Vec::new(),
        x_stars: Vec::new(),
        skipped: 0,
        fallbacks: 0,
        solver_iters: 0,
        cg_iters: 0,
    };
    for outcome in outcomes {
        match outcome {
            SampleOutcome::Used {
                loss,
                grad,
                x_star,
                solver_iters,
                cg_iters,
                fell_back,
            } => {
                match &mut out.grad {
                    Some(total) => total.axpy(1.0, &grad),
                    None => out.grad = Some(grad),
                }
                out.losses.push(loss);
                out.x_stars.push(x_star);
                out.solver_iters += solver_iters;
                out.cg_iters += cg_iters;
                out.fallbacks += fell_back as usize;
            }
            SampleOutcome::Skipped { reason } => {
                log::warn!("sample skipped: {reason}");
                out.skipped += 1;
            }
        }
    }
    if let Some(g) = &mut out.grad {
        g.scale(1.0 / out.losses.len() as f64);
    }
    Ok(out)
}

/// One full parameter update: gradient, optimizer step, spectral
/// normalization, then a refresh of frozen normalization statistics.
pub fn update_step(
    net: &mut Network,
    theta: &mut ParamVector,
    optimizer: &mut Optimizer,
    blur: &BlurOperator,
    batch: &[&Sample],
    cfg: &RunConfig,
) -> Result<BatchGradient> {
    let bg = batch_gradient(net, theta, blur, batch, cfg)?;
    if let Some(grad) = &bg.grad {
        optimizer.step(theta, grad);
        *theta = net.normalize_spectral(theta, 1)?;
        net.refresh_statistics(theta, &bg.x_stars)?;
    }
    Ok(bg)
}

/// Mean reconstruction loss over `samples` at the current parameters;
/// samples whose solve fails are left out. Returns `(mean, failures)`.
pub fn mean_fixed_point_loss(net: &Network, theta: &ParamVector, blur: &BlurOperator, samples: &[Sample], cfg: &RunConfig) -> Result<(f64, usize)> {
    let losses = samples
        .par_iter()
        .map(|s| -> Result<Option<f64>> {
            let map = DegradMap::new(net, theta, blur, &s.measurement, cfg.eta)?;
            match anderson(|x| map.apply(x), &s.measurement, &cfg.solver) {
                Ok(fp) if fp.converged => Ok(Some(mse_loss(&fp.x_star, &s.truth)?)),
                Ok(_) | Err(Error::NonContraction { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ok: Vec<f64> = losses.iter().flatten().copied().collect();
    let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
    Ok((mean, losses.len() - ok.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss at the fixed points visited during the epoch; epoch 0 is
    /// the full train split at the initial parameters.
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped: usize,
    pub cg_fallbacks: usize,
    pub mean_solver_iters: f64,
    pub mean_cg_iters: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Mean loss over the whole train split at the final parameters.
    pub final_train_loss: f64,
}

impl TrainReport {
    /// Mean loss over the whole train split at the initial parameters.
    pub fn initial_train_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// Learning with fixed-point solves in the forward pass and the configured
/// gradient scheme in the backward pass. Only the train and val splits are
/// visible here.
pub fn train(net: &mut Network, theta0: ParamVector, data: &TrainingData, cfg: &RunConfig) -> Result<(ParamVector, TrainReport)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    if theta0.len() != net.n_params() || !theta0.is_finite() {
        return Err(Error::invalid("initial parameters do not fit the network"));
    }
    let blur = cfg.blur()?;
    let mut theta = theta0;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.len());
    let mut report = TrainReport::default();

    let start = Instant::now();
    let (train0, skipped0) = mean_fixed_point_loss(net, &theta, &blur, &data.train, cfg)?;
    let (val0, _) = mean_fixed_point_loss(net, &theta, &blur, &data.val, cfg)?;
    report.epochs.push(EpochStats {
        epoch: 0,
        train_loss: train0,
        val_loss: val0,
        skipped: skipped0,
        cg_fallbacks: 0,
        mean_solver_iters: f64::NAN,
        mean_cg_iters: f64::NAN,
        seconds: start.elapsed().as_secs_f64(),
    });
    log::info!("epoch 0: train {train0:.4e}, val {val0:.4e}");

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_TAG, epoch as u64)));
        let (mut loss_sum, mut used, mut skipped, mut fallbacks, mut solver_iters, mut cg_iters) = (0.0, 0, 0, 0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let bg = update_step(net, &mut theta, &mut optimizer, &blur, &batch, cfg)?;
            loss_sum += bg.losses.iter().sum::<f64>();
            used += bg.losses.len();
            skipped += bg.skipped;
            fallbacks += bg.fallbacks;
            solver_iters += bg.solver_iters;
            cg_iters += bg.cg_iters;
        }
        let (val_loss, _) = mean_fixed_point_loss(net, &theta, &blur, &data.val, cfg)?;
        let per = |v: usize| if used == 0 { f64::NAN } else { v as f64 / used as f64 };
        let stats = EpochStats {
            epoch,
            train_loss: if used == 0 { f64::NAN } else { loss_sum / used as f64 },
            val_loss,
            skipped,
            cg_fallbacks: fallbacks,
            mean_solver_iters: per(solver_iters),
            mean_cg_iters: per(cg_iters),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.4e}, val {:.4e}, skipped {skipped}, solver iters {:.1}",
            stats.train_loss,
            stats.val_loss,
            stats.mean_solver_iters
        );
        report.epochs.push(stats);
    }
    report.final_train_loss = mean_fixed_point_loss(net, &theta, &blur, &data.train, cfg)?.0;
    log::info!("final train loss {:.4e}", report.final_train_loss);
    Ok((theta, report))
}
