//! Run artifact collection: files under one output directory plus a
//! manifest hashing every emitted file. Two runs of the same scenario
//! and seed must produce byte-identical trees, so nothing here may
//! consult the wall clock or iterate in hash-map order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum ArtifactError {
    Io(String),
}

impl fmt::Display for ArtifactError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArtifactError::Io(e) => write!(f, "artifact io: {}", e),
        }
    }
}

impl std::error::Error for ArtifactError {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub seed: u64,
    /// Hash of the scenario file bytes as loaded.
    pub config_sha256: String,
    /// Relative artifact path -> content hash, sorted by path.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{:02x}", b));
    }
    s
}

/// Collects artifacts in memory, then flushes them under `dir` and
/// produces the manifest.
pub struct ArtifactSink {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl ArtifactSink {
    pub fn new(dir: &Path) -> Self {
        ArtifactSink { dir: dir.to_path_buf(), files: BTreeMap::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// `rel` uses forward slashes; intermediate directories are created
    /// on flush.
    pub fn put(&mut self, rel: &str, bytes: Vec<u8>) {
        self.files.insert(rel.to_string(), bytes);
    }

    pub fn put_text(&mut self, rel: &str, text: String) {
        self.put(rel, text.into_bytes());
    }

    pub fn put_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), ArtifactError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| ArtifactError::Io(format!("serialize {}: {}", rel, e)))?;
        text.push('\n');
        self.put_text(rel, text);
        Ok(())
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.files.contains_key(rel)
    }

    pub fn get(&self, rel: &str) -> Option<&[u8]> {
        self.files.get(rel).map(|v| v.as_slice())
    }

    pub fn rel_paths(&self) -> Vec<String> {
        self.files.keys().cloned().collect()
    }

    /// Writes every artifact, then the manifest naming them all.
    pub fn flush(self, scenario: &str, seed: u64, config_sha256: &str) -> Result<RunManifest, ArtifactError> {
        let mut artifacts = BTreeMap::new();
        for (rel, bytes) in &self.files {
            let path = self.dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| ArtifactError::Io(format!("{}: {}", parent.display(), e)))?;
            }
            fs::write(&path, bytes).map_err(|e| ArtifactError::Io(format!("{}: {}", path.display(), e)))?;
            artifacts.insert(rel.clone(), sha256_hex(bytes));
        }
        let manifest = RunManifest {
            scenario: scenario.to_string(),
            seed,
            config_sha256: config_sha256.to_string(),
            artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ArtifactError::Io(format!("serialize manifest: {}", e)))?;
        text.push('\n');
        let path = self.dir.join("run_manifest.json");
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| ArtifactError::Io(format!("{}: {}", parent.display(), e)))?;
        }
        fs::write(&path, text).map_err(|e| ArtifactError::Io(format!("{}: {}", path.display(), e)))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, ArtifactError> {
    let path = dir.join("run_manifest.json");
    let bytes = fs::read(&path).map_err(|e| ArtifactError::Io(format!("{}: {}", path.display(), e)))?;
    serde_json::from_slice(&bytes).map_err(|e| ArtifactError::Io(format!("{}: {}", path.display(), e)))
}

/// Re-hashes the files on disk against the manifest. Returns mismatching
/// paths; empty means the tree is intact.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Vec<String> {
    let mut bad = Vec::new();
    for (rel, want) in &manifest.artifacts {
        match fs::read(dir.join(rel)) {
            Ok(bytes) => {
                if sha256_hex(&bytes) != *want {
                    bad.push(rel.clone());
                }
            }
            Err(_) => bad.push(rel.clone()),
        }
    }
    bad
}
