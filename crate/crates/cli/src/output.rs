use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Render a file into memory with `render`, then move it into place at
/// `dir/name` through a temporary file in the same directory.
pub fn write_atomic(
    dir: &Path,
    name: &str,
    render: impl FnOnce(&mut Vec<u8>) -> eda_pinn::Result<()>,
) -> CliResult<PathBuf> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    let path = dir.join(name);
    let out_err = |source| CliError::Output {
        path: path.clone(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(out_err)?;
    }
    let parent = path.parent().unwrap_or(dir);
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(out_err)?;
    tmp.write_all(&buf).map_err(out_err)?;
    tmp.as_file().sync_all().map_err(out_err)?;
    tmp.persist(&path).map_err(|e| out_err(e.error))?;
    Ok(path)
}
