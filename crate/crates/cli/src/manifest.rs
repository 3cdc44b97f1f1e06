//! Run manifests: config snapshot plus SHA-256 digests of every file a
//! pipeline read or wrote, so identical runs are verifiable byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    pub stages_completed: Vec<String>,
    /// Relative path -> SHA-256 of file contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("digesting {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_all(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for p in paths {
        out.insert(p.display().to_string(), sha256_file(p)?);
    }
    Ok(out)
}
