//! Render a folder of synthetic images and turn it into measurement pairs
//! with a manifest, the same way `degrad generate-data` does.
//!
//! Usage: cargo run --example prepare_dataset -- [OUT_DIR]

use std::path::PathBuf;

use degrad::pipeline::{generate_dataset, write_synthetic_images, DatasetManifest, RunConfig, Split};

fn main() -> degrad::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("degrad-data"));
    let mut cfg = RunConfig::desk();
    cfg.paths.data_dir = out.join("pairs");

    let source = out.join("source");
    write_synthetic_images(&source, cfg.split.total(), 64, cfg.channels, cfg.seed)?;
    let manifest = generate_dataset(&source, &cfg)?;
    println!(
        "{} train / {} val / {} test pairs in {}",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test),
        cfg.paths.data_dir.display()
    );

    let loaded = DatasetManifest::load(&cfg.paths.data_dir)?;
    let data = loaded.training_data()?;
    let first = &data.train[0];
    println!(
        "first pair: truth mean {:.3}, measurement noise seed {}",
        first.truth.mean(),
        first.seed
    );
    Ok(())
}
