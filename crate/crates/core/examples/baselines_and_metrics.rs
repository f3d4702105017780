//! Classical reconstructions of one noisy measurement, scored with MSE,
//! PSNR and SSIM, plus the semiconvergence curve of plain gradient descent.

use degrad::baselines::{direct_inverse, gd_error_trace, plain_gd_early_stop, select_early_stop, tikhonov_gd, tv_gd, BaselineConfig};
use degrad::imageops::make_gaussian_kernel;
use degrad::metrics::MetricReport;
use degrad::pipeline::{make_measurement, recenter, synthetic_image};
use degrad::BlurOperator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> degrad::Result<()> {
    let mut truth = synthetic_image(32, 1, &mut ChaCha8Rng::seed_from_u64(4));
    recenter(&mut truth);
    let blur = BlurOperator::new(make_gaussian_kernel(5, 1.0)?);
    let d = make_measurement(&blur, &truth, 1e-2, 4)?;

    let steps = select_early_stop(&blur, &d, &truth, 1000)?;
    let rows = [
        ("measurement", d.clone()),
        ("direct inverse", direct_inverse(&blur, &d)?),
        ("tikhonov 1e-2", tikhonov_gd(&blur, &d, &BaselineConfig::tikhonov(1e-2))?),
        ("tv 1e-3", tv_gd(&blur, &d, &BaselineConfig::total_variation(1e-3))?),
        ("early-stopped gd", plain_gd_early_stop(&blur, &d, steps)?),
    ];
    println!("{:<18} {:>10} {:>8} {:>6}", "method", "mse", "psnr", "ssim");
    for (name, x) in &rows {
        let m = MetricReport::compute(x, &truth)?;
        println!("{name:<18} {:>10.3e} {:>8.2} {:>6.3}", m.mse, m.psnr, m.ssim);
    }

    let trace = gd_error_trace(&blur, &d, &truth, 1000)?;
    println!("\ngradient descent error (best step {steps}):");
    for k in [0, 10, 50, steps, 500, 1000] {
        println!("  step {k:>4}: {:.3e}", trace[k]);
    }
    Ok(())
}
