//! File formats and the `ssg` command line around [`ssg_core`].
//!
//! Scenes and prediction dumps are JSONL, checkpoints are a JSON manifest
//! next to a raw little-endian `f32` blob, and metric reports are CSV with
//! a JSON mirror. Every writer is a pure function of its input, so equal
//! runs produce equal bytes.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dump;
pub mod error;
pub mod manifest;
pub mod report;
pub mod scenes;

pub use error::{Error, Result};
pub use ssg_core;

use std::path::Path;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating missing parent directories.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
