//! Atomic file output: everything is written to a temporary file in the
//! destination directory and renamed into place.

use std::io::Write;
use std::path::Path;

use amrf_core::{save_image, save_mask, BinaryMask, ImageBuffer};
use tempfile::NamedTempFile;

use crate::CliError;

fn temp_beside(path: &Path) -> Result<NamedTempFile, CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))
}

fn persist(tmp: NamedTempFile, path: &Path) -> Result<(), CliError> {
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = temp_beside(path)?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.flush().map_err(|e| CliError::io(path, e))?;
    persist(tmp, path)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(amrf_core::Error::from)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_image(path: &Path, image: &ImageBuffer) -> Result<(), CliError> {
    let tmp = temp_beside(path)?;
    save_image(image, tmp.path())?;
    persist(tmp, path)
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), CliError> {
    let tmp = temp_beside(path)?;
    save_mask(mask, tmp.path())?;
    persist(tmp, path)
}
