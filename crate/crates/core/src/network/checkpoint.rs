//! Binary checkpoint container for a network and its parameters.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   "DGRDCKPT"            8 bytes
//! version u32                   currently 1
//! config  n_layers, channels, hidden_channels, kernel_size (u64 each),
//!         contraction_scale (f64), normalization (u8: 0 none, 1 affine),
//!         spectral_grid, init_power_iters (u64 each)
//! params  count u64, then count × f64
//! state   per layer: len u64 + len × f64 power-iteration vector,
//!         flag u8, and when set: out_ch × f64 mean then out_ch × f64 var
//! ```
//!
//! Floats are stored by bit pattern, so write → read → write is byte-identical.

use std::io::{Read, Write};
use std::path::Path;

use super::cnn::{NetConfig, Network, Normalization};
use super::params::ParamVector;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DGRDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn fmt_err(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u64(&mut self, v: usize) -> std::io::Result<()> {
        self.bytes(&(v as u64).to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_bits().to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn exact<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| fmt_err(format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.exact()?);
        usize::try_from(v).map_err(|_| fmt_err("count overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(u64::from_le_bytes(self.exact()?)))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn write_checkpoint(out: impl Write, net: &Network, theta: &ParamVector) -> Result<()> {
    if theta.len() != net.n_params() {
        return Err(Error::invalid("parameter vector does not match the network layout"));
    }
    let mut w = Writer { inner: out };
    let cfg = net.config();
    let io = |e| fmt_err(format!("write failed: {e}"));
    (|| -> std::io::Result<()> {
        w.bytes(MAGIC)?;
        w.bytes(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.u64(cfg.n_layers)?;
        w.u64(cfg.channels)?;
        w.u64(cfg.hidden_channels)?;
        w.u64(cfg.kernel_size)?;
        w.f64(cfg.contraction_scale)?;
        w.bytes(&[match cfg.normalization {
            Normalization::None => 0,
            Normalization::Affine => 1,
        }])?;
        w.u64(cfg.spectral_grid)?;
        w.u64(cfg.init_power_iters)?;
        w.u64(theta.len())?;
        w.f64s(theta.as_slice())?;
        for (u, stats) in net.spectral.iter().zip(&net.stats) {
            w.u64(u.len())?;
            w.f64s(u)?;
            match stats {
                Some(s) => {
                    w.bytes(&[1])?;
                    w.f64s(&s.mean)?;
                    w.f64s(&s.var)?;
                }
                None => w.bytes(&[0])?,
            }
        }
        w.inner.flush()
    })()
    .map_err(io)
}

pub fn read_checkpoint(input: impl Read) -> Result<(Network, ParamVector)> {
    let mut r = Reader { inner: input };
    if &r.exact::<8>()? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = u32::from_le_bytes(r.exact()?);
    if version != CHECKPOINT_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let n_layers = r.u64()?;
    let channels = r.u64()?;
    let hidden_channels = r.u64()?;
    let kernel_size = r.u64()?;
    let contraction_scale = r.f64()?;
    let normalization = match r.exact::<1>()?[0] {
        0 => Normalization::None,
        1 => Normalization::Affine,
        other => return Err(fmt_err(format!("unknown normalization tag {other}"))),
    };
    let config = NetConfig {
        n_layers,
        channels,
        hidden_channels,
        kernel_size,
        contraction_scale,
        normalization,
        spectral_grid: r.u64()?,
        init_power_iters: r.u64()?,
    };
    let mut net = Network::with_config(config, 0)?;
    let count = r.u64()?;
    if count != net.n_params() {
        return Err(fmt_err(format!(
            "{count} parameters stored, architecture needs {}",
            net.n_params()
        )));
    }
    let theta = ParamVector::from_vec(net.layout().clone(), r.f64s(count)?)?;
    for l in 0..net.spectral.len() {
        let len = r.u64()?;
        if len != net.spectral[l].len() {
            return Err(fmt_err(format!("layer {l}: power vector has {len} entries")));
        }
        net.spectral[l] = r.f64s(len)?;
        let flag = r.exact::<1>()?[0];
        match (&mut net.stats[l], flag) {
            (Some(stats), 1) => {
                let n = stats.mean.len();
                stats.mean = r.f64s(n)?;
                stats.var = r.f64s(n)?;
            }
            (None, 0) => {}
            _ => return Err(fmt_err(format!("layer {l}: normalization state mismatch"))),
        }
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing).map_err(|e| fmt_err(e.to_string()))? != 0 {
        return Err(fmt_err("trailing bytes"));
    }
    Ok((net, theta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network, theta: &ParamVector) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net, theta)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, ParamVector)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}
