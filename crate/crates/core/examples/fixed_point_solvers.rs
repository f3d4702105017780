//! Picard against Anderson on the same reconstruction problem, with the
//! residual histories written as CSV.

use degrad::fixedpoint::{solve_anderson, solve_picard, SolverConfig};
use degrad::imageops::make_gaussian_kernel;
use degrad::network::Network;
use degrad::pipeline::{make_measurement, pretrain, synthetic_image, synthetic_splits, RunConfig};
use degrad::BlurOperator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> degrad::Result<()> {
    let truth = synthetic_image(32, 1, &mut ChaCha8Rng::seed_from_u64(2));
    let blur = BlurOperator::new(make_gaussian_kernel(5, 1.0)?);
    let d = make_measurement(&blur, &truth, 1e-2, 2)?;
    // A random network is rarely contractive; a few seconds of denoiser
    // pretraining fixes that.
    let mut cfg = RunConfig::desk();
    cfg.net.hidden_channels = 8;
    let (data, _) = synthetic_splits(&cfg)?;
    let (mut net, theta) = Network::initialize(cfg.net.clone(), cfg.seed)?;
    let (theta, _) = pretrain(&mut net, theta, &data, &cfg)?;

    let eta = cfg.eta;
    let base = SolverConfig {
        tol: 1e-6,
        max_iters: 2000,
        ..SolverConfig::default()
    };
    let picard = solve_picard(&net, &theta, &blur, &d, &d, eta, &SolverConfig { anderson_memory: 1, ..base.clone() })?;
    println!("picard:   {} iterations, converged {}", picard.iters, picard.converged);
    for m in [2, 5, 10] {
        let cfg = SolverConfig {
            anderson_memory: m,
            ..base.clone()
        };
        let fp = solve_anderson(&net, &theta, &blur, &d, &d, eta, &cfg)?;
        println!(
            "anderson({m:>2}): {} iterations, converged {}, distance to picard {:.1e}",
            fp.iters,
            fp.converged,
            fp.x_star.sub(&picard.x_star).rms()
        );
        if m == 5 {
            fp.write_residual_csv(std::io::stdout().lock())?;
        }
    }
    Ok(())
}
