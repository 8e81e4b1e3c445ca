use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub init: u64,
    pub batch_order: u64,
    pub dropout: u64,
    pub lime: u64,
}

impl Seeds {
    pub fn of(config: &RunConfig) -> Self {
        let s = config.seed;
        Self {
            split: s,
            init: s,
            batch_order: s,
            dropout: s,
            lime: s,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Option<RunConfig>,
    pub seeds: Seeds,
    /// Path relative to the run directory -> sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    /// Wall time of the last run of each command.
    pub timings_ms: BTreeMap<String, u64>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn load_manifest(run_dir: &Path) -> Result<Option<RunManifest>> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(Some(serde_json::from_slice(&bytes)?))
}

/// Rehashes every file in the run directory and records the command's time.
pub fn update_manifest(run_dir: &Path, config: &RunConfig, command: &str, elapsed: Duration) -> Result<RunManifest> {
    let mut m = load_manifest(run_dir)?.unwrap_or_default();
    m.tool_version = env!("CARGO_PKG_VERSION").to_string();
    m.config = Some(config.clone());
    m.seeds = Seeds::of(config);
    m.timings_ms.insert(command.to_string(), elapsed.as_millis() as u64);

    let mut files = Vec::new();
    collect_files(run_dir, &mut files)?;
    files.sort();
    m.artifacts.clear();
    for f in files {
        let rel = relative(run_dir, &f);
        if rel == MANIFEST_FILE {
            continue;
        }
        m.artifacts.insert(rel, sha256_file(&f)?);
    }
    let path = run_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m)?;
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(m)
}
