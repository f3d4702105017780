use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backprop::GradScheme;
use crate::error::{Error, Result};
use crate::fixedpoint::SolverConfig;
use crate::imageops::{make_gaussian_kernel, BlurOperator};
use crate::network::NetConfig;

/// Version written into every config file; readers reject anything else.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// `Θ ← Θ − α g`
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Standard deviation of the synthetic noise the denoiser learns to predict.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Candidate weights for the Tikhonov baseline, tuned on the validation split.
    pub tikhonov_lambdas: Vec<f64>,
    /// Candidate weights for the total-variation baseline.
    pub tv_lambdas: Vec<f64>,
    pub baseline_steps: usize,
    /// Upper bound on the early-stopping search of the plain gradient baseline.
    pub gd_max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub batch_size: usize,
    pub warmup: usize,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub image_size: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    pub blur_size: usize,
    pub blur_variance: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub eta: f64,
    pub seed: u64,
    /// Use the Jacobian-free gradient for samples whose conjugate-gradient solve fails.
    pub cg_fallback_to_jfb: bool,
    pub split: SplitSizes,
    pub scheme: GradScheme,
    pub solver: SolverConfig,
    pub net: NetConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// 32×32 grayscale, 64/16/16 split and a 3-layer network trained with
    /// Adam: small enough for a laptop CPU.
    pub fn desk() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            image_size: 32,
            channels: 1,
            noise_sigma: 1e-2,
            blur_size: 5,
            blur_variance: 1.0,
            batch_size: 8,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            eta: 0.5,
            seed: 0,
            cg_fallback_to_jfb: true,
            split: SplitSizes {
                train: 64,
                val: 16,
                test: 16,
            },
            // The implicit solve needs a few hundred CG steps beyond 32×32.
            scheme: GradScheme {
                cg_max_iters: 1000,
                ..GradScheme::jfb()
            },
            solver: SolverConfig {
                max_iters: 200,
                ..SolverConfig::default()
            },
            net: NetConfig {
                n_layers: 3,
                hidden_channels: 16,
                ..NetConfig::desk()
            },
            pretrain: PretrainConfig {
                epochs: 20,
                learning_rate: 1e-3,
                noise_sigma: 5e-2,
            },
            eval: EvalConfig {
                tikhonov_lambdas: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2],
                tv_lambdas: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
                baseline_steps: 300,
                gd_max_steps: 300,
            },
            bench: BenchConfig {
                sizes: (1..=8).map(|k| 16 * k).collect(),
                batch_size: 16,
                warmup: 2,
                repetitions: 20,
            },
            paths: PathsConfig {
                data_dir: PathBuf::from("data"),
                checkpoint: PathBuf::from("degrad.ckpt"),
                report_dir: PathBuf::from("reports"),
            },
        }
    }

    /// 128×128 RGB, 8000/1000/1000 split, the full 17-layer network and
    /// plain gradient steps.
    pub fn paper() -> Self {
        Self {
            image_size: 128,
            channels: 3,
            batch_size: 16,
            optimizer: OptimizerKind::Sgd,
            eta: 0.1,
            split: SplitSizes {
                train: 8000,
                val: 1000,
                test: 1000,
            },
            net: NetConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Format {
                what: "run config".into(),
                reason: format!(
                    "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                    self.format_version
                ),
            });
        }
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("batch_size", self.batch_size),
            ("blur_size", self.blur_size),
            ("bench.batch_size", self.bench.batch_size),
            ("bench.repetitions", self.bench.repetitions),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if self.net.channels != self.channels {
            return Err(Error::invalid(format!(
                "net.channels ({}) must equal channels ({})",
                self.net.channels, self.channels
            )));
        }
        if !(self.noise_sigma >= 0.0) || !(self.pretrain.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise levels must be nonnegative"));
        }
        if !(self.learning_rate >= 0.0) || !(self.pretrain.learning_rate >= 0.0) {
            return Err(Error::invalid("learning rates must be nonnegative"));
        }
        if !(self.eta > 0.0) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if self.image_size < self.blur_size {
            return Err(Error::invalid("image_size must be at least blur_size"));
        }
        if self.bench.sizes.iter().any(|&s| s < self.blur_size) {
            return Err(Error::invalid("bench sizes must be at least blur_size"));
        }
        self.scheme.validate()?;
        self.solver.validate()?;
        self.net.validate()
    }

    pub fn blur(&self) -> Result<BlurOperator> {
        Ok(BlurOperator::new(make_gaussian_kernel(self.blur_size, self.blur_variance)?))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("RunConfig always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Format {
            what: "run config".into(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::paper()] {
            assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = RunConfig::desk().to_toml().replace("format_version = 1", "format_version = 7");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Format { .. })));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("bogus = 3\n{}", RunConfig::desk().to_toml());
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
