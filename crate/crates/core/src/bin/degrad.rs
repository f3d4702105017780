use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use degrad::backprop::SchemeKind;
use degrad::network::{load_checkpoint, save_checkpoint, Network, ParamVector};
use degrad::pipeline::{self, DatasetManifest, Method, OptimizerKind, RunConfig};

#[derive(Parser)]
#[command(name = "degrad", version, about = "Fixed-point deblurring network: data, training, evaluation, timing")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

/// Flags override values from `--config`, which override the preset.
#[derive(Args)]
struct Overrides {
    /// TOML run configuration (see `degrad show-config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, global = true)]
    image_size: Option<usize>,
    #[arg(long, global = true)]
    channels: Option<usize>,
    #[arg(long, global = true)]
    noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// jfb, jacobian_cg or neumann_k
    #[arg(long, global = true)]
    scheme: Option<SchemeKind>,
    #[arg(long, global = true)]
    neumann_k: Option<usize>,
    #[arg(long, global = true)]
    train_images: Option<usize>,
    #[arg(long, global = true)]
    val_images: Option<usize>,
    #[arg(long, global = true)]
    test_images: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    hidden_channels: Option<usize>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Subcommand)]
enum Command {
    /// Preprocess a directory of images into measurements and a manifest.
    GenerateData {
        /// Directory of PNG/PGM/PPM images.
        #[arg(long, conflicts_with = "synthetic")]
        source: Option<PathBuf>,
        /// Render this many synthetic shape images into `<data-dir>/source` first.
        #[arg(long)]
        synthetic: Option<usize>,
    },
    /// Fit the learned term as a noise predictor and save a checkpoint.
    Pretrain,
    /// Train through the fixed point, starting from the checkpoint if it exists.
    Train {
        /// Start from this checkpoint instead.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Metrics for the test split against the classical baselines.
    Eval {
        /// Write reconstructions as PNG here.
        #[arg(long)]
        recon_dir: Option<PathBuf>,
    },
    /// Time one parameter update per scheme across image sizes.
    Bench {
        /// Comma-separated image sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => match self.preset {
                Preset::Desk => RunConfig::desk(),
                Preset::Paper => RunConfig::paper(),
            },
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            image_size => cfg.image_size,
            noise_sigma => cfg.noise_sigma,
            batch_size => cfg.batch_size,
            epochs => cfg.epochs,
            learning_rate => cfg.learning_rate,
            eta => cfg.eta,
            seed => cfg.seed,
            scheme => cfg.scheme.kind,
            neumann_k => cfg.scheme.neumann_k,
            train_images => cfg.split.train,
            val_images => cfg.split.val,
            test_images => cfg.split.test,
            layers => cfg.net.n_layers,
            hidden_channels => cfg.net.hidden_channels,
            data_dir => cfg.paths.data_dir,
            checkpoint => cfg.paths.checkpoint,
            report_dir => cfg.paths.report_dir,
        }
        if let Some(c) = self.channels {
            cfg.channels = c;
            cfg.net.channels = c;
        }
        if let Some(o) = self.optimizer {
            cfg.optimizer = match o {
                OptimizerArg::Sgd => OptimizerKind::Sgd,
                OptimizerArg::Adam => OptimizerKind::Adam,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.report_dir.join(name)
}

fn fresh_network(cfg: &RunConfig) -> Result<(Network, ParamVector)> {
    Ok(Network::initialize(cfg.net.clone(), cfg.seed)?)
}

fn load_network(path: &Path, cfg: &RunConfig) -> Result<(Network, ParamVector)> {
    let (net, theta) = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if net.config().channels != cfg.channels {
        bail!("checkpoint expects {} channels, config has {}", net.config().channels, cfg.channels);
    }
    Ok((net, theta))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.overrides.resolve()?;
    if let Some(n) = pipeline::init_threads()? {
        log::info!("using {n} worker threads");
    }
    match cli.command {
        Command::ShowConfig => print!("{}", cfg.to_toml()),
        Command::GenerateData { source, synthetic } => {
            let source = match (source, synthetic) {
                (Some(dir), _) => dir,
                (None, Some(count)) => {
                    let dir = cfg.paths.data_dir.join("source");
                    pipeline::write_synthetic_images(&dir, count, cfg.image_size.max(64), cfg.channels, cfg.seed)?;
                    dir
                }
                (None, None) => bail!("pass --source <dir> or --synthetic <count>"),
            };
            let manifest = pipeline::generate_dataset(&source, &cfg)?;
            println!(
                "wrote {} train / {} val / {} test pairs to {} ({} files skipped)",
                manifest.count(pipeline::Split::Train),
                manifest.count(pipeline::Split::Val),
                manifest.count(pipeline::Split::Test),
                cfg.paths.data_dir.display(),
                manifest.skipped
            );
        }
        Command::Pretrain => {
            let data = DatasetManifest::load(&cfg.paths.data_dir)?.training_data()?;
            let (mut net, theta0) = fresh_network(&cfg)?;
            let (theta, trace) = pipeline::pretrain(&mut net, theta0, &data, &cfg)?;
            save_checkpoint(&cfg.paths.checkpoint, &net, &theta)?;
            #[derive(serde::Serialize)]
            struct Row {
                epoch: usize,
                loss: f64,
            }
            let rows: Vec<Row> = trace.iter().enumerate().map(|(epoch, &loss)| Row { epoch, loss }).collect();
            pipeline::write_report(&report_path(&cfg, "pretrain.csv"), &rows, &cfg)?;
            println!(
                "pretraining loss {:.4e} -> {:.4e}; checkpoint {}",
                trace[0],
                trace[trace.len() - 1],
                cfg.paths.checkpoint.display()
            );
        }
        Command::Train { init } => {
            let data = DatasetManifest::load(&cfg.paths.data_dir)?.training_data()?;
            let (mut net, theta0) = match init.as_deref() {
                Some(path) => load_network(path, &cfg)?,
                None if cfg.paths.checkpoint.exists() => load_network(&cfg.paths.checkpoint, &cfg)?,
                None => fresh_network(&cfg)?,
            };
            let (theta, report) = pipeline::train(&mut net, theta0, &data, &cfg)?;
            save_checkpoint(&cfg.paths.checkpoint, &net, &theta)?;
            pipeline::write_report(&report_path(&cfg, "train.csv"), &report.epochs, &cfg)?;
            println!(
                "train loss {:.4e} -> {:.4e}; checkpoint {}",
                report.initial_train_loss(),
                report.final_train_loss,
                cfg.paths.checkpoint.display()
            );
        }
        Command::Eval { recon_dir } => {
            if !cfg.paths.checkpoint.exists() {
                bail!("checkpoint {} does not exist", cfg.paths.checkpoint.display());
            }
            let (net, theta) = load_network(&cfg.paths.checkpoint, &cfg)?;
            let manifest = DatasetManifest::load(&cfg.paths.data_dir)?;
            let tuning = manifest.training_data()?.val;
            let test = manifest.test_data()?;
            let report = pipeline::evaluate(&net, &theta, &test, &tuning, &cfg, recon_dir.as_deref())?;
            pipeline::write_report(&report_path(&cfg, "eval.csv"), &report.rows, &cfg)?;
            println!("{:<22} {:>10} {:>8} {:>6}", "method", "mse", "psnr", "ssim");
            for m in Method::ALL {
                if let Some(r) = report.mean(m) {
                    println!("{:<22} {:>10.3e} {:>8.2} {:>6.3}", m.name(), r.mse, r.psnr, r.ssim);
                }
            }
            if report.unconverged > 0 {
                println!("{} test solves stopped before the tolerance", report.unconverged);
            }
        }
        Command::Bench { sizes, repetitions } => {
            let mut cfg = cfg;
            if let Some(s) = sizes {
                cfg.bench.sizes = s;
            }
            if let Some(r) = repetitions {
                cfg.bench.repetitions = r;
            }
            cfg.validate()?;
            let (net, theta) = if cfg.paths.checkpoint.exists() {
                load_network(&cfg.paths.checkpoint, &cfg)?
            } else {
                fresh_network(&cfg)?
            };
            let rows = pipeline::bench(&net, &theta, &cfg)?;
            pipeline::write_report(&report_path(&cfg, "bench.csv"), &rows, &cfg)?;
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
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
