//! Run manifest: seed, timings, result summary, and a content hash for
//! every file the pipeline writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub rng_seed: u64,
    pub status: String,
    /// Wall-clock milliseconds per pipeline stage, in execution order.
    pub timings_ms: Vec<(String, u64)>,
    /// Free-form result summary values (AP scores, chosen focal plane).
    pub results: BTreeMap<String, serde_json::Value>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_seed,
            status: "incomplete".to_string(),
            timings_ms: Vec::new(),
            results: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn record_timing(&mut self, stage: &str, elapsed: std::time::Duration) {
        self.timings_ms
            .push((stage.to_string(), elapsed.as_millis() as u64));
    }

    pub fn record_result(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(
            key.to_string(),
            serde_json::to_value(value).expect("result value serializes"),
        );
    }

    /// Hashes a written file and records it relative to the output root.
    pub fn record_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.files.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(path.to_path_buf())
    }
}

/// Hex SHA-256 of a file, as used by the manifest entries.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}
