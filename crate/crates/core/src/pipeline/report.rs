use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};

/// `<report>.config.toml` next to a CSV report.
pub fn config_sidecar(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".config.toml");
    PathBuf::from(name)
}

/// Writes `rows` as CSV with a header taken from the field names, and the
/// full run configuration next to it for provenance.
pub fn write_report<T: Serialize>(path: &Path, rows: &[T], cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    cfg.save(config_sidecar(path))
}
