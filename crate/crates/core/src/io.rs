//! File output helpers. Every artifact is written to a temporary file in the
//! destination directory and renamed into place, so failures leave nothing
//! half-written behind.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = temp_beside(path)?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    set_default_mode(&tmp, path)?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Several outputs that should appear together or not at all. Nothing is
/// renamed into place until every buffer has been written.
#[derive(Default)]
pub struct StagedWrites {
    files: Vec<(std::path::PathBuf, tempfile::NamedTempFile)>,
}

impl StagedWrites {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stage(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        let mut tmp = temp_beside(path)?;
        tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
        tmp.flush().map_err(|e| Error::io(path, e))?;
        set_default_mode(&tmp, path)?;
        self.files.push((path.to_path_buf(), tmp));
        Ok(())
    }

    pub fn commit(self) -> Result<()> {
        for (path, tmp) in self.files {
            tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        }
        Ok(())
    }
}

fn temp_beside(path: &Path) -> Result<tempfile::NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))
}

/// Temporary files start out owner-only; artifacts get ordinary permissions.
#[cfg(unix)]
fn set_default_mode(tmp: &tempfile::NamedTempFile, path: &Path) -> Result<()> {
    use std::os::unix::fs::PermissionsExt;
    tmp.as_file()
        .set_permissions(std::fs::Permissions::from_mode(0o644))
        .map_err(|e| Error::io(path, e))
}

#[cfg(not(unix))]
fn set_default_mode(_tmp: &tempfile::NamedTempFile, _path: &Path) -> Result<()> {
    Ok(())
}
