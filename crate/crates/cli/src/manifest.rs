use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// Provenance record written last into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the stored `config.json`, if the command has one.
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    /// Files relative to the output directory, sorted.
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
        } else {
            out.push(
                path.strip_prefix(root)
                    .expect("walk stays under root")
                    .to_path_buf(),
            );
        }
    }
    Ok(())
}

/// Lists the files under `dir`, relative and sorted.
pub fn list_outputs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

impl RunManifest {
    /// Fills `config_hash` and `outputs` from `dir` and writes the manifest.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let config = dir.join(CONFIG_FILE);
        if config.exists() {
            self.config_hash = Some(sha256_hex(&std::fs::read(&config)?));
        }
        self.outputs = list_outputs(dir)?;
        self.outputs.push(PathBuf::from(MANIFEST_FILE));
        let text = serde_json::to_string_pretty(&self)?;
        eic_core::fsutil::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }
}
