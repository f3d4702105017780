//! The three ways of backpropagating through a fixed point, compared on one
//! image: Jacobian-free, truncated Neumann series, and the exact implicit
//! gradient by conjugate gradient.

use degrad::backprop::{Equilibrium, GradScheme};
use degrad::fixedpoint::{solve_anderson, DegradMap, SolverConfig};
use degrad::imageops::make_gaussian_kernel;
use degrad::network::Network;
use degrad::pipeline::{make_measurement, pretrain, synthetic_image, synthetic_splits, RunConfig};
use degrad::BlurOperator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> degrad::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.image_size = 16;
    cfg.net.hidden_channels = 4;
    cfg.blur_size = 3;
    cfg.blur_variance = 0.5;
    let (data, _) = synthetic_splits(&cfg)?;
    let (mut net, theta) = Network::initialize(cfg.net.clone(), cfg.seed)?;
    let (theta, _) = pretrain(&mut net, theta, &data, &cfg)?;

    let truth = synthetic_image(16, 1, &mut ChaCha8Rng::seed_from_u64(3));
    let blur = BlurOperator::new(make_gaussian_kernel(3, 0.5)?);
    let d = make_measurement(&blur, &truth, 1e-2, 3)?;
    let eta = cfg.eta;
    let cfg = SolverConfig {
        tol: 1e-10,
        max_iters: 5000,
        ..SolverConfig::default()
    };
    let fp = solve_anderson(&net, &theta, &blur, &d, &d, eta, &cfg)?;
    println!("fixed point after {} iterations", fp.iters);

    let eq = Equilibrium::from_solution(DegradMap::new(&net, &theta, &blur, &d, eta)?, &fp)?;
    let exact = eq.jacobian_cg(&truth, &GradScheme::jacobian_cg())?;
    println!("implicit gradient: {} CG iterations, residual {:.1e}", exact.cg_iters, exact.residual);
    let cosine = |g: &degrad::network::ParamVector| g.dot(&exact.grad) / (g.norm() * exact.grad.norm());

    let jfb = eq.jfb(&truth)?;
    println!("jacobian-free: cosine with exact {:.4}", cosine(&jfb.grad));
    for k in [1, 2, 5, 10, 20] {
        let nk = eq.neumann(&truth, k)?;
        let mut diff = nk.grad.clone();
        diff.axpy(-1.0, &exact.grad);
        println!(
            "neumann({k:>2}): cosine {:.4}, relative error {:.2e}",
            cosine(&nk.grad),
            diff.norm() / exact.grad.norm()
        );
    }
    Ok(())
}
