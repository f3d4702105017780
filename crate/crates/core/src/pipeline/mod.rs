//! End-to-end workflow: data preparation, pretraining, training, evaluation
//! and timing.

mod bench;
mod config;
mod data;
mod evaluate;
pub mod io;
mod optim;
mod pretrain;
mod report;
mod train;

pub use bench::{bench, bench_batch, BenchRow};
pub use config::{
    BenchConfig, EvalConfig, OptimizerKind, PathsConfig, PretrainConfig, RunConfig, SplitSizes, CONFIG_FORMAT_VERSION,
};
pub use data::{
    derive_seed, generate_dataset, make_measurement, preprocess, recenter, synthetic_image, synthetic_splits,
    write_synthetic_images, DatasetManifest, ManifestEntry, Sample, Split, TrainingData, MANIFEST_FILE,
};
pub use evaluate::{degrad_reconstruct, evaluate, tune_baselines, EvalReport, EvalRow, Method, TunedBaselines};
pub use optim::Optimizer;
pub use pretrain::pretrain;
pub use report::{config_sidecar, write_report};
pub use train::{batch_gradient, mean_fixed_point_loss, sample_gradient, train, update_step, BatchGradient, EpochStats, SampleOutcome, TrainReport};

/// Environment variable selecting the worker-thread count.
pub const THREADS_ENV: &str = "DEGRAD_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] when it is set.
/// Call once, before any parallel work.
pub fn init_threads() -> crate::Result<Option<usize>> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| crate::Error::invalid(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(crate::Error::invalid(format!("{THREADS_ENV} must be positive")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::invalid(format!("cannot configure {n} threads: {e}")))?;
    Ok(Some(n))
}
