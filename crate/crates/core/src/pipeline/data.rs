//! Dataset preparation: synthetic shapes, preprocessing, measurements and the manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::io::{image_to_tensor, load_tensor, save_image, save_tensor};
use crate::error::{Error, Result};
use crate::imageops::{BlurOperator, ImageTensor};

pub const MANIFEST_FILE: &str = "manifest.toml";
const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// A ground-truth image with its blurred, noisy observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub truth: ImageTensor,
    pub measurement: ImageTensor,
    /// Seed of the measurement noise.
    pub seed: u64,
}

/// The splits training is allowed to see. The test split lives elsewhere.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// SplitMix64 finalizer; decorrelates per-image seeds derived from one global seed.
/// The result fits in 63 bits so it survives TOML's signed integers.
pub fn derive_seed(global: u64, index: u64) -> u64 {
    let mut z = global ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 1
}

/// `A x + ε` with `ε ~ N(0, σ²)` i.i.d. drawn from `seed`.
pub fn make_measurement(blur: &BlurOperator, truth: &ImageTensor, sigma: f64, seed: u64) -> Result<ImageTensor> {
    let mut d = blur.apply(truth)?;
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in d.as_mut_slice() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * e;
        }
    }
    Ok(d)
}

/// Shifts every channel so its mean is exactly ½.
pub fn recenter(x: &mut ImageTensor) {
    for c in 0..x.channels() {
        let plane = x.channel_mut(c);
        let shift = 0.5 - plane.iter().sum::<f64>() / plane.len() as f64;
        plane.iter_mut().for_each(|v| *v += shift);
    }
}

/// Bilinear resize to `size²`, conversion to `[0, 1]`, then recentering.
pub fn preprocess(img: &image::DynamicImage, size: usize, channels: usize) -> Result<ImageTensor> {
    let resized = img.resize_exact(size as u32, size as u32, FilterType::Triangle);
    let mut x = image_to_tensor(&resized, channels)?;
    recenter(&mut x);
    Ok(x)
}

/// A smooth background with a few overlapping ellipses and rectangles,
/// rendered with 4× supersampling so edges are anti-aliased.
pub fn synthetic_image(size: usize, channels: usize, rng: &mut impl Rng) -> ImageTensor {
    const SS: usize = 4;
    let tint = |rng: &mut dyn rand::RngCore| -> Vec<f64> {
        let base: f64 = rng.gen_range(0.0..1.0);
        (0..channels)
            .map(|_| if channels == 1 { base } else { (base + rng.gen_range(-0.25..0.25)).clamp(0.0, 1.0) })
            .collect()
    };
    let bg0 = tint(rng);
    let (gx, gy): (f64, f64) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    enum Shape {
        Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, cos: f64, sin: f64 },
        Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    }
    let n_shapes = rng.gen_range(3..=6);
    let shapes: Vec<(Shape, Vec<f64>)> = (0..n_shapes)
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                Shape::Ellipse {
                    cx: rng.gen_range(0.1..0.9),
                    cy: rng.gen_range(0.1..0.9),
                    rx: rng.gen_range(0.08..0.35),
                    ry: rng.gen_range(0.08..0.35),
                    cos: angle.cos(),
                    sin: angle.sin(),
                }
            } else {
                let (x0, y0) = (rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7));
                Shape::Rect {
                    x0,
                    y0,
                    x1: x0 + rng.gen_range(0.1..0.5),
                    y1: y0 + rng.gen_range(0.1..0.5),
                }
            };
            (shape, tint(rng))
        })
        .collect();
    let inside = |s: &Shape, u: f64, v: f64| match *s {
        Shape::Ellipse { cx, cy, rx, ry, cos, sin } => {
            let (du, dv) = (u - cx, v - cy);
            let (a, b) = (du * cos + dv * sin, -du * sin + dv * cos);
            (a / rx).powi(2) + (b / ry).powi(2) <= 1.0
        }
        Shape::Rect { x0, y0, x1, y1 } => u >= x0 && u <= x1 && v >= y0 && v <= y1,
    };
    let mut out = ImageTensor::zeros(channels, size, size);
    let step = 1.0 / (size * SS) as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = vec![0.0; channels];
            for sy in 0..SS {
                for sx in 0..SS {
                    let u = (x * SS + sx) as f64 * step + 0.5 * step;
                    let v = (y * SS + sy) as f64 * step + 0.5 * step;
                    let top = shapes.iter().rev().find(|(s, _)| inside(s, u, v));
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += match top {
                            Some((_, color)) => color[c],
                            None => (bg0[c] + gx * (u - 0.5) + gy * (v - 0.5)).clamp(0.0, 1.0),
                        };
                    }
                }
            }
            for (c, a) in acc.into_iter().enumerate() {
                out.set(c, y, x, a / (SS * SS) as f64);
            }
        }
    }
    out
}

/// Writes `count` synthetic PNGs into `dir` and returns their paths.
pub fn write_synthetic_images(dir: &Path, count: usize, size: usize, channels: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let path = dir.join(format!("shape_{i:05}.png"));
            save_image(&path, &synthetic_image(size, channels, &mut rng))?;
            Ok(path)
        })
        .collect()
}

fn sample_from_truth(cfg: &RunConfig, blur: &BlurOperator, truth: ImageTensor, index: u64) -> Result<Sample> {
    let seed = derive_seed(cfg.seed, index);
    let measurement = make_measurement(blur, &truth, cfg.noise_sigma, seed)?;
    Ok(Sample {
        truth,
        measurement,
        seed,
    })
}

/// Builds the configured splits in memory from synthetic shapes, skipping
/// the file round trip. The second element is the test split.
pub fn synthetic_splits(cfg: &RunConfig) -> Result<(TrainingData, Vec<Sample>)> {
    cfg.validate()?;
    let blur = cfg.blur()?;
    let mut all = (0..cfg.split.total())
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5a5a, i as u64));
            let mut truth = synthetic_image(cfg.image_size, cfg.channels, &mut rng);
            recenter(&mut truth);
            sample_from_truth(cfg, &blur, truth, i as u64)
        })
        .collect::<Result<Vec<_>>>()?;
    let test = all.split_off(cfg.split.train + cfg.split.val);
    let val = all.split_off(cfg.split.train);
    Ok((TrainingData { train: all, val }, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub split: Split,
    pub source: PathBuf,
    /// Relative to the manifest's directory.
    pub truth: PathBuf,
    pub measurement: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub image_size: usize,
    pub channels: usize,
    pub noise_sigma: f64,
    /// Source files that could not be decoded.
    pub skipped: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: Self = toml::from_str(&text).map_err(|e| Error::Format {
            what: "dataset manifest",
            reason: e.to_string(),
        })?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format {
                what: "dataset manifest",
                reason: format!("unsupported format_version {}", manifest.format_version),
            });
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self).map_err(|e| Error::Format {
            what: "dataset manifest",
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                Ok(Sample {
                    truth: load_tensor(self.base_dir.join(&e.truth))?,
                    measurement: load_tensor(self.base_dir.join(&e.measurement))?,
                    seed: e.seed,
                })
            })
            .collect()
    }

    /// Loads the train and validation splits; the test split is not touched.
    pub fn training_data(&self) -> Result<TrainingData> {
        Ok(TrainingData {
            train: self.load_split(Split::Train)?,
            val: self.load_split(Split::Val)?,
        })
    }

    pub fn test_data(&self) -> Result<Vec<Sample>> {
        self.load_split(Split::Test)
    }
}

/// Preprocesses every readable image under `source_dir` into `cfg.paths.data_dir`
/// and writes the manifest there.
///
/// Files are visited in a seeded shuffle of their sorted names; readable
/// images fill the train, val and test splits in that order until the
/// configured sizes are met.
pub fn generate_dataset(source_dir: &Path, cfg: &RunConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(source_dir)
        .map_err(|e| Error::io(source_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(Error::invalid(format!("no files in {}", source_dir.display())));
    }
    files.sort();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let out_dir = &cfg.paths.data_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let blur = cfg.blur()?;
    let mut entries = Vec::new();
    let mut skipped = 0;
    for file in files {
        let index = entries.len();
        let split = if index < cfg.split.train {
            Split::Train
        } else if index < cfg.split.train + cfg.split.val {
            Split::Val
        } else if index < cfg.split.total() {
            Split::Test
        } else {
            break;
        };
        let img = match image::open(&file) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", file.display());
                skipped += 1;
                continue;
            }
        };
        let truth = preprocess(&img, cfg.image_size, cfg.channels)?;
        let sample = sample_from_truth(cfg, &blur, truth, index as u64)?;
        let truth_name = PathBuf::from(format!("truth_{index:05}.tns"));
        let meas_name = PathBuf::from(format!("meas_{index:05}.tns"));
        save_tensor(out_dir.join(&truth_name), &sample.truth)?;
        save_tensor(out_dir.join(&meas_name), &sample.measurement)?;
        entries.push(ManifestEntry {
            split,
            source: file,
            truth: truth_name,
            measurement: meas_name,
            seed: sample.seed,
        });
    }
    if entries.is_empty() {
        return Err(Error::invalid(format!("no readable images in {}", source_dir.display())));
    }
    if entries.len() < cfg.split.total() {
        log::warn!(
            "only {} usable images for {} requested; later splits are short",
            entries.len(),
            cfg.split.total()
        );
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        image_size: cfg.image_size,
        channels: cfg.channels,
        noise_sigma: cfg.noise_sigma,
        skipped,
        entries,
        base_dir: out_dir.clone(),
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recentered_mean_is_half() {
        let mut x = ImageTensor::from_fn(3, 5, 4, |c, r, k| (c * 3 + r * k) as f64 / 40.0);
        recenter(&mut x);
        for c in 0..3 {
            let m = x.channel(c).iter().sum::<f64>() / 20.0;
            assert!((m - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn synthetic_images_are_seeded() {
        let a = synthetic_image(16, 3, &mut ChaCha8Rng::seed_from_u64(4));
        let b = synthetic_image(16, 3, &mut ChaCha8Rng::seed_from_u64(4));
        let c = synthetic_image(16, 3, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
