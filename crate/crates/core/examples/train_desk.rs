//! Pretrain, train with Jacobian-free backpropagation and evaluate on the
//! desk configuration with synthetic data. Takes a few minutes.
//!
//! Usage: cargo run --release --example train_desk -- [EPOCHS]

use degrad::network::Network;
use degrad::pipeline::{evaluate, pretrain, synthetic_splits, train, Method, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::desk();
    if let Some(e) = std::env::args().nth(1) {
        cfg.epochs = e.parse()?;
    }
    let (data, test) = synthetic_splits(&cfg)?;
    let (mut net, theta) = Network::initialize(cfg.net.clone(), cfg.seed)?;

    let (theta, trace) = pretrain(&mut net, theta, &data, &cfg)?;
    println!("pretraining loss {:.3e} -> {:.3e}", trace[0], trace[trace.len() - 1]);

    let (theta, report) = train(&mut net, theta, &data, &cfg)?;
    for e in &report.epochs {
        println!("epoch {:>2}: train {:.3e}, val {:.3e}, skipped {}", e.epoch, e.train_loss, e.val_loss, e.skipped);
    }
    println!("final train loss {:.3e}", report.final_train_loss);

    let eval = evaluate(&net, &theta, &test, &data.val, &cfg, None)?;
    for m in Method::ALL {
        if let Some(r) = eval.mean(m) {
            println!("{:<22} psnr {:>6.2}  ssim {:.3}", m.name(), r.psnr, r.ssim);
        }
    }
    Ok(())
}
