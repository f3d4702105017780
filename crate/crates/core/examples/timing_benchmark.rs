//! Per-batch update time of Jacobian-free against conjugate-gradient
//! backpropagation as the image grows.
//!
//! Usage: cargo run --release --example timing_benchmark -- [REPETITIONS]

use degrad::network::Network;
use degrad::pipeline::{bench, pretrain, synthetic_splits, RunConfig};

fn main() -> degrad::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.net.hidden_channels = 8;
    cfg.bench.sizes = vec![16, 24, 32];
    cfg.bench.batch_size = 4;
    cfg.bench.repetitions = std::env::args().nth(1).and_then(|r| r.parse().ok()).unwrap_or(3);
    let (data, _) = synthetic_splits(&cfg)?;
    let (mut net, theta) = Network::initialize(cfg.net.clone(), cfg.seed)?;
    let (theta, _) = pretrain(&mut net, theta, &data, &cfg)?;
    let rows = bench(&net, &theta, &cfg)?;
    println!("{:>5} {:<12} {:>10} {:>10} {:>9}", "size", "scheme", "mean_s", "std_s", "cg_iters");
    for r in &rows {
        println!(
            "{:>5} {:<12} {:>10.4} {:>10.4} {:>9.1}",
            r.size,
            r.scheme.to_string(),
            r.mean_seconds,
            r.std_seconds,
            r.mean_cg_iters
        );
    }
    Ok(())
}
