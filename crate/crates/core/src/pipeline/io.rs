//! Raw tensor files and PGM/PNG image conversion.
//!
//! Tensor files hold `b"DGRDTENS"`, a little-endian `u32` version, the
//! `u64` channel/height/width triple and then the samples as `f64` LE.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::imageops::ImageTensor;

const TENSOR_MAGIC: &[u8; 8] = b"DGRDTENS";
const TENSOR_VERSION: u32 = 1;

pub fn write_tensor(out: impl Write, x: &ImageTensor) -> Result<()> {
    let mut out = BufWriter::new(out);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| Error::io("<tensor>", e));
    write(TENSOR_MAGIC)?;
    write(&TENSOR_VERSION.to_le_bytes())?;
    for d in [x.channels(), x.height(), x.width()] {
        write(&(d as u64).to_le_bytes())?;
    }
    for v in x.as_slice() {
        write(&v.to_le_bytes())?;
    }
    out.flush().map_err(|e| Error::io("<tensor>", e))
}

pub fn read_tensor(input: impl Read) -> Result<ImageTensor> {
    let mut bytes = Vec::new();
    BufReader::new(input)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<tensor>", e))?;
    let bad = |reason: &str| Error::Format {
        what: "tensor file",
        reason: reason.to_string(),
    };
    if bytes.len() < 36 || &bytes[..8] != TENSOR_MAGIC {
        return Err(bad("missing header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let n = c.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or_else(|| bad("shape overflow"))?;
    let body = &bytes[36..];
    if body.len() != n * 8 {
        return Err(bad(&format!("expected {} data bytes, found {}", n * 8, body.len())));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ImageTensor::new(c, h, w, data)
}

pub fn save_tensor(path: impl AsRef<Path>, x: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_tensor(file, x)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_tensor(file)
}

/// Converts a decoded image to `channels` planes with intensities in `[0, 1]`.
pub fn image_to_tensor(img: &DynamicImage, channels: usize) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match channels {
        1 => {
            let gray = img.to_luma32f();
            ImageTensor::new(1, h, w, gray.into_raw().into_iter().map(f64::from).collect())
        }
        3 => {
            let rgb = img.to_rgb32f();
            Ok(ImageTensor::from_fn(3, h, w, |c, y, x| {
                f64::from(rgb.get_pixel(x as u32, y as u32)[c])
            }))
        }
        _ => Err(Error::invalid(format!("channels must be 1 or 3, got {channels}"))),
    }
}

/// Quantizes to 8 bits after clamping to `[0, 1]`.
pub fn tensor_to_image(x: &ImageTensor) -> Result<DynamicImage> {
    let (h, w) = (x.height() as u32, x.width() as u32);
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match x.channels() {
        1 => {
            let img: GrayImage = ImageBuffer::from_fn(w, h, |c, r| Luma([q(x.get(0, r as usize, c as usize))]));
            Ok(DynamicImage::ImageLuma8(img))
        }
        3 => {
            let img: RgbImage = ImageBuffer::from_fn(w, h, |c, r| {
                let (r, c) = (r as usize, c as usize);
                Rgb([q(x.get(0, r, c)), q(x.get(1, r, c)), q(x.get(2, r, c))])
            });
            Ok(DynamicImage::ImageRgb8(img))
        }
        n => Err(Error::invalid(format!("cannot encode a {n}-channel image"))),
    }
}

pub fn load_image(path: impl AsRef<Path>, channels: usize) -> Result<ImageTensor> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    image_to_tensor(&img, channels)
}

/// Writes PNG or PGM depending on the extension.
pub fn save_image(path: impl AsRef<Path>, x: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    let img = tensor_to_image(x)?;
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm && x.channels() != 1 {
        return Err(Error::invalid("PGM output needs a single-channel image"));
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
