use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult, Stage};

/// Collects a command's outputs, refusing existing targets unless forced,
/// and writes each one atomically (temp file in the same directory, then
/// rename).
pub struct Outputs {
    force: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(force: bool) -> Self {
        Outputs { force, written: Vec::new() }
    }

    /// Checks every target before any work is done.
    pub fn claim(&self, paths: &[&Path]) -> CliResult<()> {
        if self.force {
            return Ok(());
        }
        for p in paths {
            if p.exists() {
                return Err(CliError::new(
                    "write",
                    format!("{} exists; pass --force to overwrite", p.display()),
                ));
            }
        }
        Ok(())
    }

    pub fn write(&mut self, path: &Path, contents: &str) -> CliResult<()> {
        if !self.force && path.exists() {
            return Err(CliError::new("write", format!("{} exists; pass --force to overwrite", path.display())));
        }
        write_atomic(path, contents.as_bytes())?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::new("write", format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::new("write", format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::new("write", format!("{}: {e}", path.display())))?;
    tmp.persist(path).map_err(|e| CliError::new("write", format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn read_text(path: &Path, stage: &'static str) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display())).stage(stage)
}
