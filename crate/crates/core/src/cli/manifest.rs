//! Run manifests: one JSON file per artifact-producing command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Hash of a byte string as a git blob object, with SHA-256:
/// `sha256("blob <len>\0" ++ content)`.
pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize().as_slice())
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(FileHash {
            path: path.display().to_string(),
            sha256: git_blob_sha256(&bytes),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    /// Every resolved setting, after flag/file/default precedence.
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub timings: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], config: &BTreeMap<String, String>) -> Self {
        Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: argv.to_vec(),
            config: config.clone(),
            seed: config.get("seed").and_then(|s| s.parse().ok()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                self.inputs.push(FileHash::of(&f)?);
            }
        } else {
            self.inputs.push(FileHash::of(path)?);
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileHash::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_of_empty() {
        // `git hash-object --object-format=sha256` of an empty file.
        assert_eq!(
            git_blob_sha256(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
