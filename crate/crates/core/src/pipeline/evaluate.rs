use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::data::Sample;
use super::io::save_image;
use crate::baselines::{direct_inverse, plain_gd_early_stop, select_early_stop, tikhonov_gd, tv_gd, BaselineConfig};
use crate::error::{Error, Result};
use crate::fixedpoint::{anderson, DegradMap};
use crate::imageops::{BlurOperator, ImageTensor};
use crate::metrics::MetricReport;
use crate::network::{Network, ParamVector};

/// Validation pairs used when tuning baseline hyperparameters.
const MAX_TUNING_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Measurement,
    DirectInverse,
    PlainGdEarlyStop,
    TikhonovGd,
    TvGd,
    Degrad,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Measurement,
        Method::DirectInverse,
        Method::PlainGdEarlyStop,
        Method::TikhonovGd,
        Method::TvGd,
        Method::Degrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Measurement => "measurement",
            Method::DirectInverse => "direct_inverse",
            Method::PlainGdEarlyStop => "plain_gd_early_stop",
            Method::TikhonovGd => "tikhonov_gd",
            Method::TvGd => "tv_gd",
            Method::Degrad => "degrad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of the classical baselines, chosen on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedBaselines {
    pub tikhonov_lambda: f64,
    pub tv_lambda: f64,
    pub gd_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub image: usize,
    pub method: Method,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub tuned: TunedBaselines,
    /// Test images whose DE-GRAD solve stopped before reaching the tolerance.
    pub unconverged: usize,
}

impl EvalReport {
    /// Mean metrics of one method over the test images.
    pub fn mean(&self, method: Method) -> Option<MetricReport> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(MetricReport {
            mse: rows.iter().map(|r| r.mse).sum::<f64>() / n,
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        })
    }
}

fn mean_mse(samples: &[Sample], f: impl Fn(&Sample) -> Result<ImageTensor> + Sync) -> Result<f64> {
    let errs = samples
        .par_iter()
        .map(|s| crate::metrics::mse(&f(s)?, &s.truth))
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn argmin_lambda(grid: &[f64], samples: &[Sample], f: impl Fn(&Sample, f64) -> Result<ImageTensor> + Sync) -> Result<f64> {
    let mut best = (f64::INFINITY, *grid.first().ok_or_else(|| Error::invalid("empty lambda grid"))?);
    for &lambda in grid {
        let err = mean_mse(samples, |s| f(s, lambda))?;
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

fn tikhonov_config(lambda: f64, cfg: &RunConfig) -> BaselineConfig {
    BaselineConfig {
        steps: cfg.eval.baseline_steps,
        ..BaselineConfig::tikhonov(lambda)
    }
}

fn tv_config(lambda: f64, cfg: &RunConfig) -> BaselineConfig {
    BaselineConfig {
        steps: cfg.eval.baseline_steps,
        ..BaselineConfig::total_variation(lambda)
    }
}

/// Grid search of the Tikhonov and TV weights and of the early-stopping
/// step count on `tuning` pairs. Falls back to the grid midpoints when no
/// tuning data is available.
pub fn tune_baselines(blur: &BlurOperator, tuning: &[Sample], cfg: &RunConfig) -> Result<TunedBaselines> {
    let ev = &cfg.eval;
    if tuning.is_empty() {
        let mid = |g: &[f64]| g.get(g.len() / 2).copied().unwrap_or(0.0);
        return Ok(TunedBaselines {
            tikhonov_lambda: mid(&ev.tikhonov_lambdas),
            tv_lambda: mid(&ev.tv_lambdas),
            gd_steps: ev.gd_max_steps / 2,
        });
    }
    let tuning = &tuning[..tuning.len().min(MAX_TUNING_SAMPLES)];
    let tikhonov_lambda = argmin_lambda(&ev.tikhonov_lambdas, tuning, |s, l| tikhonov_gd(blur, &s.measurement, &tikhonov_config(l, cfg)))?;
    let tv_lambda = argmin_lambda(&ev.tv_lambdas, tuning, |s, l| tv_gd(blur, &s.measurement, &tv_config(l, cfg)))?;
    let mut steps = tuning
        .iter()
        .map(|s| select_early_stop(blur, &s.measurement, &s.truth, ev.gd_max_steps))
        .collect::<Result<Vec<_>>>()?;
    steps.sort_unstable();
    Ok(TunedBaselines {
        tikhonov_lambda,
        tv_lambda,
        gd_steps: steps[steps.len() / 2],
    })
}

/// The DE-GRAD reconstruction: Anderson-accelerated fixed point started at `d`.
/// Returns the final iterate and whether it met the tolerance.
pub fn degrad_reconstruct(net: &Network, theta: &ParamVector, blur: &BlurOperator, d: &ImageTensor, cfg: &RunConfig) -> Result<(ImageTensor, bool)> {
    let map = DegradMap::new(net, theta, blur, d, cfg.eta)?;
    match anderson(|x| map.apply(x), d, &cfg.solver) {
        Ok(fp) => Ok((fp.x_star, fp.converged)),
        Err(Error::NonContraction { .. }) => {
            log::warn!("fixed-point solve diverged; reporting the measurement instead");
            Ok((d.clone(), false))
        }
        Err(e) => Err(e),
    }
}

/// Metrics for every test image and method. Baseline hyperparameters are
/// tuned on `tuning` (the validation split), never on the test images.
/// With `recon_dir`, writes the truth, measurement, direct inverse,
/// early-stopped gradient descent and DE-GRAD images as PNG.
pub fn evaluate(
    net: &Network,
    theta: &ParamVector,
    test: &[Sample],
    tuning: &[Sample],
    cfg: &RunConfig,
    recon_dir: Option<&Path>,
) -> Result<EvalReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::Precondition("test split is empty".into()));
    }
    let blur = cfg.blur()?;
    let tuned = tune_baselines(&blur, tuning, cfg)?;
    log::info!("tuned baselines: {tuned:?}");
    if let Some(dir) = recon_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let per_image = test
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<(Vec<EvalRow>, bool)> {
            let d = &s.measurement;
            let (degrad, converged) = degrad_reconstruct(net, theta, &blur, d, cfg)?;
            let recon = [
                (Method::Measurement, d.clone()),
                (Method::DirectInverse, direct_inverse(&blur, d)?),
                (Method::PlainGdEarlyStop, plain_gd_early_stop(&blur, d, tuned.gd_steps)?),
                (Method::TikhonovGd, tikhonov_gd(&blur, d, &tikhonov_config(tuned.tikhonov_lambda, cfg))?),
                (Method::TvGd, tv_gd(&blur, d, &tv_config(tuned.tv_lambda, cfg))?),
                (Method::Degrad, degrad),
            ];
            if let Some(dir) = recon_dir {
                save_image(dir.join(format!("img{i:03}_truth.png")), &s.truth)?;
                for (m, x) in &recon {
                    if *m != Method::TikhonovGd && *m != Method::TvGd {
                        save_image(dir.join(format!("img{i:03}_{m}.png")), x)?;
                    }
                }
            }
            let rows = recon
                .iter()
                .map(|(method, x)| {
                    let r = MetricReport::compute(x, &s.truth)?;
                    Ok(EvalRow {
                        image: i,
                        method: *method,
                        mse: r.mse,
                        psnr: r.psnr,
                        ssim: r.ssim,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((rows, converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let unconverged = per_image.iter().filter(|(_, ok)| !ok).count();
    Ok(EvalReport {
        rows: per_image.into_iter().flat_map(|(rows, _)| rows).collect(),
        tuned,
        unconverged,
    })
}
