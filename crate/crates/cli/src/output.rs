use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use bodyfit::manifest::RunManifest;

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut f = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

/// CSV preceded by a `# {manifest}` comment line.
pub fn csv_with_manifest(manifest: &RunManifest, body: &[u8]) -> Vec<u8> {
    let mut out = format!("# {}\n", serde_json::to_string(manifest).expect("manifest serializes")).into_bytes();
    out.extend_from_slice(body);
    out
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn required_out(out: &Option<PathBuf>) -> anyhow::Result<&Path> {
    out.as_deref().context("--out is required for this command")
}

pub fn unix_time() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_default()
}
