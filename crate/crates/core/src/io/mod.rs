//! File formats: baseline grayscale TIFF stacks, localization and ground-truth
//! CSV, SLNet weights, and flat `key = value` run configuration.
//!
//! All writers go through [`atomic_write`]: the bytes land in a temporary file
//! next to the target which is then renamed over it, so readers never observe a
//! half-written file.

mod config;
mod csv;
mod tiff;
mod weights;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{format_config, parse_config, read_config, ConfigEntry};
pub use csv::{
    format_locs_csv, format_truth_csv, parse_locs_csv, parse_truth_csv, read_locs_csv, read_truth_csv, write_locs_csv,
    write_truth_csv, LOCS_HEADER, TRUTH_HEADER,
};
pub use tiff::{decode_tiff, encode_tiff, read_tiff, write_tiff};
pub use weights::{decode_model, encode_model, load_model, save_model, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::file(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::file(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::file(path, e))?;
    tmp.persist(path).map_err(|e| Error::file(path, e.error))?;
    Ok(())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}
