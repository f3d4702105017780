use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::RunConfig;
use super::data::{derive_seed, make_measurement, recenter, synthetic_image, Sample};
use super::optim::Optimizer;
use super::train::update_step;
use crate::backprop::{GradScheme, SchemeKind};
use crate::error::{Error, Result};
use crate::network::{Network, ParamVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: usize,
    pub scheme: SchemeKind,
    /// False when the cell could not be run; the timing columns are then NaN.
    pub available: bool,
    pub mean_seconds: f64,
    pub std_seconds: f64,
    pub mean_solver_iters: f64,
    pub mean_cg_iters: f64,
    pub skipped: usize,
    pub cg_fallbacks: usize,
}

/// A fixed batch of synthetic pairs at `size × size`.
pub fn bench_batch(cfg: &RunConfig, size: usize) -> Result<Vec<Sample>> {
    let blur = cfg.blur()?;
    (0..cfg.bench.batch_size)
        .map(|i| {
            let seed = derive_seed(cfg.seed, (size * 10_000 + i) as u64);
            let mut truth = synthetic_image(size, cfg.channels, &mut ChaCha8Rng::seed_from_u64(seed));
            recenter(&mut truth);
            let measurement = make_measurement(&blur, &truth, cfg.noise_sigma, seed)?;
            Ok(Sample { truth, measurement, seed })
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn bench_cell(net: &Network, theta: &ParamVector, batch: &[Sample], scheme: GradScheme, cfg: &RunConfig) -> Result<BenchRow> {
    let cfg = RunConfig { scheme, ..cfg.clone() };
    let blur = cfg.blur()?;
    let refs: Vec<&Sample> = batch.iter().collect();
    let mut times = Vec::with_capacity(cfg.bench.repetitions);
    let (mut solver_iters, mut cg_iters, mut used, mut skipped, mut fallbacks) = (0, 0, 0, 0, 0);
    for rep in 0..cfg.bench.warmup + cfg.bench.repetitions {
        // Every repetition performs the same update from the same starting point.
        let mut net = net.clone();
        let mut theta = theta.clone();
        let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.len());
        let start = Instant::now();
        let bg = update_step(&mut net, &mut theta, &mut optimizer, &blur, &refs, &cfg)?;
        let elapsed = start.elapsed().as_secs_f64();
        if rep >= cfg.bench.warmup {
            times.push(elapsed);
            solver_iters += bg.solver_iters;
            cg_iters += bg.cg_iters;
            used += bg.losses.len();
            skipped += bg.skipped;
            fallbacks += bg.fallbacks;
        }
    }
    let (mean, std) = mean_std(&times);
    let per = |v: usize| if used == 0 { f64::NAN } else { v as f64 / used as f64 };
    Ok(BenchRow {
        size: batch[0].truth.height(),
        scheme: scheme.kind,
        available: true,
        mean_seconds: mean,
        std_seconds: std,
        mean_solver_iters: per(solver_iters),
        mean_cg_iters: per(cg_iters),
        skipped,
        cg_fallbacks: fallbacks,
    })
}

/// Times one full parameter update per repetition for the Jacobian-free and
/// the conjugate-gradient schemes at every configured image size, on a
/// single thread. A cell that fails is reported as unavailable and the
/// run moves on.
pub fn bench(net: &Network, theta: &ParamVector, cfg: &RunConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build benchmark thread pool: {e}")))?;
    let schemes = [
        GradScheme { kind: SchemeKind::Jfb, ..cfg.scheme },
        GradScheme { kind: SchemeKind::JacobianCg, ..cfg.scheme },
    ];
    pool.install(|| {
        let mut rows = Vec::new();
        for &size in &cfg.bench.sizes {
            let batch = bench_batch(cfg, size)?;
            for scheme in schemes {
                let row = bench_cell(net, theta, &batch, scheme, cfg).unwrap_or_else(|e| {
                    log::warn!("size {size}, {}: unavailable ({e})", scheme.kind);
                    BenchRow {
                        size,
                        scheme: scheme.kind,
                        available: false,
                        mean_seconds: f64::NAN,
                        std_seconds: f64::NAN,
                        mean_solver_iters: f64::NAN,
                        mean_cg_iters: f64::NAN,
                        skipped: 0,
                        cg_fallbacks: 0,
                    }
                });
                log::info!(
                    "size {size}, {}: {:.4} s ± {:.4} (cg iters {:.1})",
                    scheme.kind,
                    row.mean_seconds,
                    row.std_seconds,
                    row.mean_cg_iters
                );
                rows.push(row);
            }
        }
        Ok(rows)
    })
}
