use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::config::RunConfig;
use super::data::{derive_seed, TrainingData};
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::imageops::ImageTensor;
use crate::network::{Linearization, Network, ParamVector};

const NOISE_TAG: u64 = 0x7072_6574_7261;

fn noise_like(x: &ImageTensor, sigma: f64, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(x.channels(), x.height(), x.width(), |_, _, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        sigma * e
    })
}

/// `‖S(x + ε) − ε‖² / n` and its parameter gradient.
fn denoiser_loss(net: &Network, theta: &ParamVector, truth: &ImageTensor, noise: &ImageTensor) -> Result<(f64, ParamVector)> {
    let input = truth.add(noise);
    let lin = net.linearize_at(theta, &input)?;
    let residual = lin.output().sub(noise);
    let n = residual.len() as f64;
    let grad = lin.vjp_params(&residual.scaled(2.0 / n))?;
    Ok((residual.dot(&residual) / n, grad))
}

/// Trains `S_Θ` to predict the additive noise in `x + ε`, with fresh noise
/// every epoch. No fixed point is involved. Returns the parameters and the
/// mean loss per epoch, preceded by the loss at the initial parameters.
pub fn pretrain(net: &mut Network, theta0: ParamVector, data: &TrainingData, cfg: &RunConfig) -> Result<(ParamVector, Vec<f64>)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    let p = &cfg.pretrain;
    let mut theta = theta0;
    let mut optimizer = Optimizer::new(cfg.optimizer, p.learning_rate, theta.len());
    let n = data.train.len();
    let noise_seed = |epoch: usize, i: usize| derive_seed(cfg.seed ^ NOISE_TAG, (epoch * n + i) as u64);

    let initial: Vec<f64> = data
        .train
        .par_iter()
        .enumerate()
        .map(|(i, s)| Ok(denoiser_loss(net, &theta, &s.truth, &noise_like(&s.truth, p.noise_sigma, noise_seed(0, i)))?.0))
        .collect::<Result<_>>()?;
    let mut trace = vec![initial.iter().sum::<f64>() / n as f64];

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=p.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ NOISE_TAG, !(epoch as u64))));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let results = chunk
                .par_iter()
                .map(|&i| {
                    let truth = &data.train[i].truth;
                    denoiser_loss(net, &theta, truth, &noise_like(truth, p.noise_sigma, noise_seed(epoch, i)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = theta.zeros_like();
            for (loss, g) in &results {
                total += loss;
                grad.axpy(1.0, g);
            }
            grad.scale(1.0 / results.len() as f64);
            optimizer.step(&mut theta, &grad);
            theta = net.normalize_spectral(&theta, 1)?;
            let inputs: Vec<ImageTensor> = chunk.iter().map(|&i| data.train[i].truth.clone()).collect();
            net.refresh_statistics(&theta, &inputs)?;
        }
        trace.push(total / n as f64);
        log::info!("pretrain epoch {epoch}: loss {:.4e}", total / n as f64);
    }
    Ok((theta, trace))
}
