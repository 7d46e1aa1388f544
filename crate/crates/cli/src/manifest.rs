//! Run manifests: everything needed to repeat a command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use aegan::config::RunConfig;
use aegan::models::hex_string;
use aegan::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    /// SHA-256 of the file, or of the sorted `(name, digest)` list for a directory.
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Parsed arguments, replayed verbatim.
    pub invocation: Command,
    /// Configuration after file loading and flag overrides; absent for gradcheck.
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub threads: usize,
    /// Directory relative paths in `invocation` are resolved against.
    pub working_dir: PathBuf,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Command-specific facts such as network fingerprints.
    pub notes: BTreeMap<String, String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: byte_offset(&text, e.line(), e.column()),
            message: e.to_string(),
        })
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> u64 {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (before + column.saturating_sub(1)) as u64
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex_string(&Sha256::digest(&bytes)))
}

/// Digest of a file, or of a directory's immediate files.
pub fn digest(path: &Path) -> Result<FileDigest> {
    let sha256 = if path.is_dir() {
        let mut names: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut hasher = Sha256::new();
        for file in names {
            let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(sha256_file(&file)?.as_bytes());
            hasher.update(b"\n");
        }
        hex_string(&hasher.finalize())
    } else {
        sha256_file(path)?
    };
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256,
    })
}
