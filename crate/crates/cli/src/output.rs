//! Atomic output files and the per-run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RawConfig;

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Run `write` against a temporary sibling of `path`, then rename it into
/// place so readers never see a partial file.
pub fn atomic_with<E>(path: &Path, write: impl FnOnce(&Path) -> Result<(), E>) -> anyhow::Result<()>
where
    E: std::error::Error + Send + Sync + 'static,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    atomic_with(path, |tmp| fs::write(tmp, bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// SHA-256 over git's blob framing: `"blob <len>\0" ++ content`.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hashes of a file, or of every file directly inside a directory.
pub fn hash_inputs(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            out.insert(p.display().to_string(), blob_hash(&fs::read(&p)?));
        }
    } else if path.is_file() {
        out.insert(path.display().to_string(), blob_hash(&fs::read(path)?));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
}

/// Write `manifest.json` plus `config.resolved` (a config file that reproduces
/// the run when passed back via `--config`).
pub fn write_manifest(
    out: &Path,
    command: &str,
    raw: &RawConfig,
    inputs: BTreeMap<String, String>,
) -> anyhow::Result<()> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: raw.entries(),
        inputs,
    };
    write_json(&out.join("manifest.json"), &m)?;
    atomic_write(&out.join("config.resolved"), raw.to_text().as_bytes())
}
